#include "mtlk/icsa2m.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace mtlk::icsa2m {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

// Flattened [audio window | motion window] row. The motion part may carry a
// live autograd graph (denoised estimates during training).
Tensor window_row(const Tensor& audio_win, const Tensor& motion_win) {
    Tensor a = reshape(audio_win, {1, audio_win.size()});
    Tensor m = reshape(motion_win, {1, motion_win.size()});
    return concat_cols({a, m});
}

}  // namespace

std::vector<std::uint8_t> MaskSpec::frame_flags(std::size_t frames) const {
    std::vector<std::uint8_t> flags(frames, 0);
    for (const auto& [start, end] : segments) {
        if (start >= end || end > frames) throw ValueError("mask segment out of range");
        for (std::size_t i = start; i < end; ++i) {
            if (flags[i]) throw ValueError("mask segments overlap");
            flags[i] = 1;
        }
    }
    return flags;
}

std::size_t MaskSpec::masked_count() const {
    std::size_t total = 0;
    for (const auto& [start, end] : segments) total += end - start;
    return total;
}

MaskSpec sample_mask(std::size_t frames, Rng& rng) {
    if (frames < 8) throw ValueError("sample_mask: need at least 8 frames");
    const auto lo = static_cast<std::size_t>(std::ceil(0.3 * static_cast<double>(frames)));
    const auto hi = static_cast<std::size_t>(std::floor(0.7 * static_cast<double>(frames)));
    const double fraction = rng.uniform(0.3, 0.7);
    std::size_t masked = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(frames)));
    masked = std::clamp(masked, lo, hi);

    std::size_t n_segments = 1 + rng.index(3);
    n_segments = std::min({n_segments, masked, frames - masked + 1});

    // split the masked total into segment lengths
    std::vector<std::size_t> lengths(n_segments, 1);
    std::size_t remaining = masked - n_segments;
    for (std::size_t i = 0; i + 1 < n_segments && remaining > 0; ++i) {
        const std::size_t take = rng.index(remaining + 1);
        lengths[i] += take;
        remaining -= take;
    }
    lengths[n_segments - 1] += remaining;

    // distribute the free frames into gaps; interior gaps stay >= 1
    std::size_t free = frames - masked;
    std::vector<std::size_t> gaps(n_segments + 1, 0);
    for (std::size_t i = 1; i < n_segments; ++i) {
        gaps[i] = 1;
        --free;
    }
    for (std::size_t i = 0; i <= n_segments && free > 0; ++i) {
        const std::size_t take = i == n_segments ? free : rng.index(free + 1);
        gaps[i] += take;
        free -= take;
    }

    MaskSpec spec;
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < n_segments; ++i) {
        cursor += gaps[i];
        spec.segments.emplace_back(cursor, cursor + lengths[i]);
        cursor += lengths[i];
    }
    return spec;
}

AssembledInput assemble_input(const AudioFeatures& audio, const MotionSequence& context,
                              const Tensor& x_t, const std::vector<std::uint8_t>& mask,
                              double t, const StylePrompt* style, const ModelConfig& cfg) {
    const std::size_t target = audio.length();
    if (context.length() != target || mask.size() != target) {
        throw ShapeError("assemble_input: misaligned target lengths");
    }
    if (audio.dim() != cfg.audio_dim || context.dim() != cfg.motion_dim) {
        throw ShapeError("assemble_input: feature widths disagree with the model config");
    }
    const bool present = style != nullptr && style->present;
    const std::size_t prompt = present ? style->audio.length() : 0;
    if (present && style->motion.length() != prompt) {
        throw ShapeError("assemble_input: style prompt audio/motion misaligned");
    }
    if (x_t.rows() != prompt + target || x_t.cols() != cfg.motion_dim) {
        throw ShapeError("assemble_input: x_t shape disagrees with the layout");
    }

    const std::size_t da = cfg.audio_dim, dm = cfg.motion_dim;
    const std::size_t channels = cfg.in_channels();
    const double presence = present ? 1.0 : 0.0;
    const auto& xt = x_t.values();
    std::vector<double> out((prompt + target) * channels, 0.0);

    auto fill_row = [&](std::size_t row, const double* audio_row, const double* context_row,
                        double mask_flag) {
        double* dst = out.data() + row * channels;
        for (std::size_t j = 0; j < da; ++j) dst[j] = audio_row[j];
        if (context_row != nullptr) {
            for (std::size_t j = 0; j < dm; ++j) dst[da + j] = context_row[j];
        }
        dst[da + dm] = mask_flag;
        for (std::size_t j = 0; j < dm; ++j) dst[da + dm + 1 + j] = xt[row * dm + j];
        dst[da + 2 * dm + 1] = presence;
    };

    if (present) {
        const auto& pa = style->audio.frames.values();
        const auto& pm = style->motion.frames.values();
        for (std::size_t i = 0; i < prompt; ++i) {
            fill_row(i, pa.data() + i * da, pm.data() + i * dm, 0.0);
        }
    }
    const auto& ta = audio.frames.values();
    const auto& tm = context.frames.values();
    for (std::size_t i = 0; i < target; ++i) {
        fill_row(prompt + i, ta.data() + i * da, mask[i] ? nullptr : tm.data() + i * dm,
                 mask[i] ? 1.0 : 0.0);
    }

    AssembledInput assembled;
    assembled.channels = Tensor::from_data({prompt + target, channels}, std::move(out));
    assembled.t = t;
    assembled.prompt_frames = prompt;
    assembled.target_frames = target;
    return assembled;
}

Tensor estimate_x1(const Tensor& x_t, double t, const Tensor& v) {
    if (t >= 1.0) throw ValueError("estimate_x1: t must be below 1");
    return add(x_t, scale(v, 1.0 - t));
}

StylizedMotionModel::StylizedMotionModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    nn::VelocityModelConfig net_cfg;
    net_cfg.in_channels = cfg.in_channels();
    net_cfg.motion_dim = cfg.motion_dim;
    net_cfg.max_frames = cfg.max_frames;
    net_cfg.transformer = cfg.transformer;
    net_ = nn::VelocityModel(net_cfg, rng);
}

Tensor StylizedMotionModel::velocity_full(const AssembledInput& input) const {
    return net_.forward(input.channels, input.t);
}

// --- sync scorer ---

SyncScorer::SyncScorer(const SyncScorerConfig& cfg, std::size_t audio_dim, std::size_t motion_dim,
                       Rng& rng)
    : cfg_(cfg), audio_dim_(audio_dim), motion_dim_(motion_dim) {
    const std::size_t flat = row_width();
    l1_ = nn::LinearLayer::init(flat, cfg.hidden, rng);
    l2_ = nn::LinearLayer::init(cfg.hidden, cfg.hidden, rng);
    l3_ = nn::LinearLayer::init(cfg.hidden, 1, rng);
}

Tensor SyncScorer::score_rows(const Tensor& rows) const {
    if (rows.cols() != row_width()) throw ShapeError("sync scorer: row width mismatch");
    Tensor h = gelu(l1_.forward(rows));
    h = gelu(l2_.forward(h));
    return l3_.forward(h);
}

double SyncScorer::score_pair(const Tensor& audio_win, const Tensor& motion_win) const {
    NoGradGuard guard;
    return score_rows(window_row(audio_win, motion_win)).item();
}

void SyncScorer::freeze() {
    l1_.set_trainable(false);
    l2_.set_trainable(false);
    l3_.set_trainable(false);
    frozen_ = true;
}

nn::NamedParams SyncScorer::named_params() const {
    nn::NamedParams out;
    l1_.collect("l1", out);
    l2_.collect("l2", out);
    l3_.collect("l3", out);
    return out;
}

namespace {

// Aligned window plus a >= min_shift shifted one from the same clip.
struct WindowPair {
    Tensor pos_row;
    Tensor neg_row;
};

WindowPair draw_window_pair(const synth::SpeakerClip& clip, const SyncScorerConfig& cfg,
                            Rng& rng) {
    NoGradGuard guard;
    const std::size_t frames = clip.audio.length();
    const std::size_t w = cfg.window;
    if (frames < w + cfg.min_shift) throw ValueError("sync scorer: clip too short for windows");
    const std::size_t max_start = frames - w;
    const std::size_t i = rng.index(max_start + 1);
    std::size_t j = i;
    while (std::max(i, j) - std::min(i, j) < cfg.min_shift) j = rng.index(max_start + 1);

    Tensor audio_win = slice_rows(clip.audio.frames, i, w);
    WindowPair pair;
    pair.pos_row = window_row(audio_win, slice_rows(clip.motion.frames, i, w));
    pair.neg_row = window_row(audio_win, slice_rows(clip.motion.frames, j, w));
    return pair;
}

}  // namespace

SyncScorer train_sync_scorer(const synth::SpeakerDataset& data, const SyncScorerConfig& scorer_cfg,
                             const SyncTrainConfig& cfg) {
    std::vector<std::size_t> train_clips;
    for (std::size_t i = 0; i < data.clips.size(); ++i) {
        if (!data.clips[i].held_out) train_clips.push_back(i);
    }
    if (train_clips.empty()) throw ValueError("train_sync_scorer: no training clips");

    Rng init_rng(mix_seed(cfg.seed, 0x5c0e));
    SyncScorer scorer(scorer_cfg, synth::kAudioDim, synth::kMotionDim, init_rng);
    Adam opt(scorer.params(), {cfg.lr});

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Rng rng(mix_seed(cfg.seed, step));
        std::vector<Tensor> pos_rows, neg_rows;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const auto& clip = data.clips[train_clips[rng.index(train_clips.size())]];
            WindowPair pair = draw_window_pair(clip, scorer_cfg, rng);
            pos_rows.push_back(pair.pos_row);
            neg_rows.push_back(pair.neg_row);
        }
        Tensor rows = concat_rows({concat_rows(pos_rows), concat_rows(neg_rows)});
        Tensor scores = scorer.score_rows(rows);
        Tensor diff = sub(slice_rows(scores, 0, cfg.batch), slice_rows(scores, cfg.batch, cfg.batch));
        Tensor loss = mean(softplus(neg(diff)));
        opt.zero_grad();
        loss.backward();
        opt.step();
    }
    scorer.freeze();
    return scorer;
}

double sync_ranking_accuracy(const SyncScorer& scorer,
                             const std::vector<std::pair<AudioFeatures, MotionSequence>>& pairs,
                             std::size_t trials, std::uint64_t seed) {
    if (pairs.empty() || trials == 0) throw ValueError("sync_ranking_accuracy: nothing to rank");
    NoGradGuard guard;
    const SyncScorerConfig& cfg = scorer.config();
    std::size_t hits = 0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        Rng rng(mix_seed(seed, trial));
        const auto& [audio, motion] = pairs[rng.index(pairs.size())];
        synth::SpeakerClip clip{0, audio, motion, false};
        WindowPair pair = draw_window_pair(clip, cfg, rng);
        const double pos = scorer.score_rows(pair.pos_row).item();
        const double neg_score = scorer.score_rows(pair.neg_row).item();
        if (pos > neg_score) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(trials);
}

// --- combined objective ---

namespace {

struct LossPieces {
    Tensor x1_full;   // (P+T) x dm, plain values
    AssembledInput input;
    std::vector<std::uint8_t> mask;
};

LossPieces build_pieces(const StylizedMotionModel& model, const TrainExample& example) {
    const ModelConfig& cfg = model.config();
    const std::size_t target = example.motion.length();
    if (example.audio.length() != target) throw ShapeError("icsa2m_loss: misaligned example");
    const std::size_t prompt = example.style.length();

    LossPieces pieces;
    pieces.mask = example.mask.frame_flags(target);

    std::vector<double> x1((prompt + target) * cfg.motion_dim);
    if (prompt > 0) {
        const auto& pm = example.style.motion.frames.values();
        std::copy(pm.begin(), pm.end(), x1.begin());
    }
    const auto& tm = example.motion.frames.values();
    std::copy(tm.begin(), tm.end(), x1.begin() + prompt * cfg.motion_dim);
    pieces.x1_full = Tensor::from_data({prompt + target, cfg.motion_dim}, std::move(x1));

    Tensor x_t = flow::interpolate(example.x0, pieces.x1_full, example.t);
    pieces.input = assemble_input(example.audio, example.motion, x_t, pieces.mask, example.t,
                                  example.style.present ? &example.style : nullptr, cfg);
    return pieces;
}

}  // namespace

LossParts icsa2m_loss(const StylizedMotionModel& model, const TrainExample& example,
                      const SyncScorer* scorer, double lambda_sync) {
    if (lambda_sync > 0.0 && (scorer == nullptr || !scorer->frozen())) {
        throw ValueError("icsa2m_loss: a frozen sync scorer is required when lambda_sync > 0");
    }
    const ModelConfig& cfg = model.config();
    LossPieces pieces = build_pieces(model, example);
    const std::size_t prompt = pieces.input.prompt_frames;
    const std::size_t target = pieces.input.target_frames;
    const std::size_t dm = cfg.motion_dim;

    Tensor v_full = model.velocity_full(pieces.input);
    Tensor u_full = sub(pieces.x1_full, example.x0);  // plain values

    // masked-frame weights over the full layout
    std::size_t masked = 0;
    std::vector<double> w((prompt + target) * dm, 0.0);
    for (std::size_t i = 0; i < target; ++i) {
        if (pieces.mask[i]) {
            ++masked;
            for (std::size_t j = 0; j < dm; ++j) w[(prompt + i) * dm + j] = 1.0;
        }
    }
    if (masked == 0) throw ValueError("icsa2m_loss: empty mask");
    Tensor weights = Tensor::from_data({prompt + target, dm}, std::move(w));

    Tensor diff = sub(v_full, u_full);
    Tensor cfm = scale(sum(mul(mul(diff, diff), weights)),
                       1.0 / static_cast<double>(masked * dm));

    LossParts parts;
    parts.cfm = cfm.item();
    if (lambda_sync == 0.0) {
        parts.total = cfm;
        return parts;
    }

    // sync penalty: negative mean score over majority-masked windows of the
    // denoised estimate paired with their audio
    const SyncScorerConfig& scfg = scorer->config();
    Tensor x_t_target = slice_rows(pieces.input.channels, prompt, target);
    x_t_target = slice_cols(x_t_target, cfg.audio_dim + dm + 1, dm);  // x_t channels
    Tensor v_target = slice_rows(v_full, prompt, target);
    Tensor est = estimate_x1(x_t_target.detach(), example.t, v_target);

    std::vector<Tensor> rows;
    if (target >= scfg.window) {
        for (std::size_t start = 0; start + scfg.window <= target; start += scfg.stride) {
            std::size_t in_mask = 0;
            for (std::size_t i = start; i < start + scfg.window; ++i) in_mask += pieces.mask[i];
            if (2 * in_mask < scfg.window) continue;
            Tensor audio_win = slice_rows(example.audio.frames, start, scfg.window);
            rows.push_back(window_row(audio_win, slice_rows(est, start, scfg.window)));
        }
    }
    if (rows.empty()) {
        parts.sync = 0.0;
        parts.total = cfm;
        return parts;
    }
    Tensor sync = neg(mean(scorer->score_rows(concat_rows(rows))));
    parts.sync = sync.item();
    parts.total = add(cfm, scale(sync, lambda_sync));
    return parts;
}

std::vector<double> per_frame_cfm(const StylizedMotionModel& model, const TrainExample& example) {
    NoGradGuard guard;
    const ModelConfig& cfg = model.config();
    LossPieces pieces = build_pieces(model, example);
    const std::size_t prompt = pieces.input.prompt_frames;
    const std::size_t target = pieces.input.target_frames;
    const std::size_t dm = cfg.motion_dim;

    Tensor v_full = model.velocity_full(pieces.input);
    const auto& v = v_full.values();
    const auto& x1 = pieces.x1_full.values();
    const auto& x0 = example.x0.values();

    std::size_t masked = 0;
    for (std::size_t i = 0; i < target; ++i) masked += pieces.mask[i];
    const double norm = 1.0 / static_cast<double>(masked * dm);

    std::vector<double> contributions(target, 0.0);
    for (std::size_t i = 0; i < target; ++i) {
        if (!pieces.mask[i]) continue;
        double acc = 0.0;
        for (std::size_t j = 0; j < dm; ++j) {
            const std::size_t idx = (prompt + i) * dm + j;
            const double d = v[idx] - (x1[idx] - x0[idx]);
            acc += d * d;
        }
        contributions[i] = acc * norm;
    }
    return contributions;
}

std::vector<StepLog> train_icsa2m(StylizedMotionModel& model, Adam& opt,
                                  const synth::SpeakerDataset& data, const SyncScorer* scorer,
                                  const TrainConfig& cfg) {
    if (cfg.lambda_sync > 0.0 && scorer == nullptr) {
        throw ValueError("train_icsa2m: lambda_sync > 0 requires a trained sync scorer");
    }
    const std::size_t n_speakers = data.styles.size();
    if (n_speakers == 0) throw ValueError("train_icsa2m: empty dataset");
    const ModelConfig& mc = model.config();

    const auto started = Clock::now();
    std::vector<StepLog> log;
    for (std::size_t step = cfg.start_step; step < cfg.steps; ++step) {
        Rng rng(mix_seed(cfg.seed, step));

        const std::size_t speaker = rng.index(n_speakers);
        const auto train_clips = data.clips_of(speaker, false);
        if (train_clips.empty()) throw ValueError("train_icsa2m: speaker without training clips");
        const std::size_t clip_idx = train_clips[rng.index(train_clips.size())];
        const synth::SpeakerClip& clip = data.clips[clip_idx];

        const std::size_t frames = clip.audio.length();
        std::size_t max_target = std::min(cfg.max_target, frames);
        max_target = std::min(max_target, mc.max_frames - cfg.prompt_frames);
        const std::size_t min_target = std::min(cfg.min_target, max_target);
        const std::size_t target =
            static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(min_target),
                                                 static_cast<std::int64_t>(max_target)));
        const std::size_t offset = rng.index(frames - target + 1);

        TrainExample example;
        {
            NoGradGuard guard;
            example.audio = AudioFeatures{slice_rows(clip.audio.frames, offset, target)};
            example.motion = MotionSequence{slice_rows(clip.motion.frames, offset, target)};
        }
        example.mask = sample_mask(target, rng);

        const bool drop = rng.uniform() < cfg.p_drop;
        if (!drop) {
            // prompt from another clip of the same speaker when available
            std::size_t prompt_clip = clip_idx;
            if (train_clips.size() > 1) {
                std::size_t pick = rng.index(train_clips.size() - 1);
                std::vector<std::size_t> others;
                for (std::size_t c : train_clips) {
                    if (c != clip_idx) others.push_back(c);
                }
                prompt_clip = others[pick];
            }
            const synth::SpeakerClip& ref = data.clips[prompt_clip];
            const std::size_t p_frames = std::min(cfg.prompt_frames, ref.audio.length());
            const std::size_t p_offset = rng.index(ref.audio.length() - p_frames + 1);
            NoGradGuard guard;
            example.style.audio = AudioFeatures{slice_rows(ref.audio.frames, p_offset, p_frames)};
            example.style.motion =
                MotionSequence{slice_rows(ref.motion.frames, p_offset, p_frames)};
            example.style.present = true;
        } else {
            example.style.present = false;
        }

        example.t = rng.uniform() * (1.0 - flow::OtPath::time_guard);
        example.x0 = Tensor::randn({example.style.length() + target, mc.motion_dim}, rng);

        LossParts parts = icsa2m_loss(model, example, scorer, cfg.lambda_sync);
        opt.zero_grad();
        parts.total.backward();
        opt.step();

        if (step % cfg.log_interval == 0 || step + 1 == cfg.steps) {
            log.push_back({step, parts.total.item(), parts.cfm, parts.sync, elapsed_ms(started)});
        }
    }
    return log;
}

namespace {

// Velocity field over the [prompt | target] layout. Prompt-region state
// follows its known straight path via a constant velocity; the model drives
// only the target region.
struct InferenceContext {
    const StylizedMotionModel* model;
    AudioFeatures driving;
    MotionSequence zero_context;
    std::vector<std::uint8_t> full_mask;
    const StylePrompt* style;          // nullptr for the unstylized branch
    std::vector<double> prompt_velocity;  // prompt x dm, empty when no prompt

    Tensor velocity(const Tensor& x, double t, bool with_style) const {
        const ModelConfig& cfg = model->config();
        const std::size_t dm = cfg.motion_dim;
        const std::size_t prompt = style != nullptr ? style->length() : 0;
        const std::size_t target = driving.length();

        Tensor x_target = prompt > 0 ? slice_rows(x, prompt, target) : x;
        AssembledInput input;
        if (with_style && style != nullptr) {
            input = assemble_input(driving, zero_context, x, full_mask, t, style, cfg);
        } else {
            input = assemble_input(driving, zero_context, x_target, full_mask, t, nullptr, cfg);
        }
        Tensor v = model->velocity_full(input);
        if (prompt == 0) return v;

        Tensor v_target = with_style ? slice_rows(v, prompt, target) : v;
        std::vector<double> full((prompt + target) * dm);
        std::copy(prompt_velocity.begin(), prompt_velocity.end(), full.begin());
        const auto& tv = v_target.values();
        std::copy(tv.begin(), tv.end(), full.begin() + prompt * dm);
        return Tensor::from_data({prompt + target, dm}, std::move(full));
    }
};

}  // namespace

MotionSequence infer_stylized(const StylizedMotionModel& model, const AudioFeatures& driving,
                              const StylePrompt& reference, double cfg_w,
                              const flow::SolverConfig& solver, Rng& rng) {
    if (!reference.present) throw ValueError("infer_stylized: reference prompt must be present");
    if (reference.audio.length() != reference.motion.length()) {
        throw ShapeError("infer_stylized: reference pair misaligned");
    }
    NoGradGuard guard;
    const ModelConfig& cfg = model.config();
    const std::size_t prompt = reference.length();
    const std::size_t target = driving.length();
    const std::size_t dm = cfg.motion_dim;

    Tensor x0 = Tensor::randn({prompt + target, dm}, rng);

    InferenceContext ctx;
    ctx.model = &model;
    ctx.driving = driving;
    ctx.zero_context = MotionSequence{Tensor::zeros({target, dm})};
    ctx.full_mask.assign(target, 1);
    ctx.style = &reference;
    ctx.prompt_velocity.resize(prompt * dm);
    const auto& pm = reference.motion.frames.values();
    const auto& x0v = x0.values();
    for (std::size_t i = 0; i < prompt * dm; ++i) ctx.prompt_velocity[i] = pm[i] - x0v[i];

    flow::GuidedField field;
    field.cond = [&ctx](const Tensor& x, double t) { return ctx.velocity(x, t, true); };
    field.uncond = [&ctx](const Tensor& x, double t) { return ctx.velocity(x, t, false); };

    Tensor out = flow::sample_from(field, x0, cfg_w, solver);
    return MotionSequence{slice_rows(out, prompt, target).detach()};
}

MotionSequence infer_unstylized(const StylizedMotionModel& model, const AudioFeatures& driving,
                                const flow::SolverConfig& solver, Rng& rng) {
    NoGradGuard guard;
    const ModelConfig& cfg = model.config();
    const std::size_t target = driving.length();

    InferenceContext ctx;
    ctx.model = &model;
    ctx.driving = driving;
    ctx.zero_context = MotionSequence{Tensor::zeros({target, cfg.motion_dim})};
    ctx.full_mask.assign(target, 1);
    ctx.style = nullptr;

    flow::GuidedField field;
    field.cond = [&ctx](const Tensor& x, double t) { return ctx.velocity(x, t, false); };
    field.uncond = field.cond;

    Tensor x0 = Tensor::randn({target, cfg.motion_dim}, rng);
    Tensor out = flow::sample_from(field, x0, 0.0, solver);
    return MotionSequence{out.detach()};
}

}  // namespace mtlk::icsa2m
