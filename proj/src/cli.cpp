#include "mtlk/cli.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "mtlk/checkpoint.hpp"
#include "mtlk/flow.hpp"
#include "mtlk/gradcheck.hpp"

namespace mtlk::cli {

namespace {

namespace fs = std::filesystem;
using io::Container;
using io::CsvWriter;
using io::RunConfig;

std::string pad4(std::size_t n) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04zu", n);
    return buf;
}

std::size_t env_worker_cap(std::size_t jobs) {
    std::size_t cap = std::thread::hardware_concurrency();
    if (cap == 0) cap = 1;
    if (const char* env = std::getenv("MTLK_THREADS")) {
        const long parsed = std::strtol(env, nullptr, 10);
        if (parsed >= 1) cap = static_cast<std::size_t>(parsed);
    }
    return std::max<std::size_t>(1, std::min(cap, jobs));
}

void parallel_for(std::size_t jobs, const std::function<void(std::size_t)>& body) {
    const std::size_t workers = env_worker_cap(jobs);
    if (workers <= 1) {
        for (std::size_t i = 0; i < jobs; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::string error;
    std::mutex error_mutex;
    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs || failed.load()) return;
            try {
                body(i);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(error_mutex);
                failed.store(true);
                if (error.empty()) error = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i + 1 < workers; ++i) pool.emplace_back(work);
    work();
    for (std::thread& th : pool) th.join();
    if (failed.load()) throw NumericalError("worker failure: " + error);
}

void require_file(const fs::path& path, const std::string& missing_stage) {
    if (!fs::exists(path)) {
        throw ValueError("missing prerequisite " + path.string() + "; run '" + missing_stage +
                         "' first");
    }
}

icsa2m::ModelConfig model_config_from(const RunConfig& cfg) {
    icsa2m::ModelConfig mc;
    mc.motion_dim = synth::kMotionDim;
    mc.audio_dim = synth::kAudioDim;
    mc.max_frames = cfg.max_frames;
    mc.transformer.hidden = cfg.hidden;
    mc.transformer.layers = cfg.layers;
    mc.transformer.heads = cfg.heads;
    mc.transformer.head_dim = cfg.head_dim;
    mc.transformer.mlp_layers = cfg.mlp_layers;
    return mc;
}

sdh::RendererConfig renderer_config_from(const RunConfig& cfg) {
    sdh::RendererConfig rc;
    rc.enc_hidden = cfg.enc_hidden;
    rc.dec_hidden = cfg.dec_hidden;
    return rc;
}

void load_params_into(const Container& container, const std::string& prefix,
                      const nn::NamedParams& params) {
    for (const auto& [name, tensor] : params) {
        const io::NamedArray& a = container.get(prefix + name);
        Tensor t = tensor;  // handle copy, same storage
        if (a.shape != t.shape()) {
            throw ValueError("checkpoint: shape mismatch for '" + name + "'");
        }
        t.values_mut() = a.data;
    }
}

void store_params(Container& container, const std::string& prefix, const nn::NamedParams& params) {
    for (const auto& [name, tensor] : params) container.put(prefix + name, tensor);
}

void store_adam(Container& container, const Adam& opt, const nn::NamedParams& params) {
    Adam& mutable_opt = const_cast<Adam&>(opt);
    if (params.size() != opt.params().size()) {
        throw ValueError("checkpoint: optimizer/parameter list mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Shape shape = params[i].second.shape();
        container.put("adam/m/" + params[i].first, shape, mutable_opt.moment1(i));
        container.put("adam/v/" + params[i].first, shape, mutable_opt.moment2(i));
    }
    container.put_scalar("adam/steps", static_cast<double>(opt.step_count()));
}

void load_adam(const Container& container, Adam& opt, const nn::NamedParams& params) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        opt.moment1(i) = container.get("adam/m/" + params[i].first).data;
        opt.moment2(i) = container.get("adam/v/" + params[i].first).data;
    }
    opt.set_step_count(static_cast<std::size_t>(container.scalar_value("adam/steps")));
}

}  // namespace

// --- dataset files ---

void save_speaker_dataset(const fs::path& path, const synth::SpeakerDataset& data,
                          std::uint64_t seed, const std::string& echo) {
    Container c;
    c.seed = seed;
    c.config_echo = echo;
    c.put_scalar("meta/n_speakers", static_cast<double>(data.styles.size()));
    c.put_scalar("meta/clips_per_speaker", static_cast<double>(data.clips_per_speaker));
    c.put_scalar("meta/frames_per_clip", static_cast<double>(data.frames_per_clip));
    for (std::size_t s = 0; s < data.styles.size(); ++s) {
        const synth::SpeakerStyle& style = data.styles[s];
        c.put("speaker/" + pad4(s) + "/gain", {synth::kMotionDim},
              std::vector<double>(style.gain.begin(), style.gain.end()));
        c.put("speaker/" + pad4(s) + "/offset", {synth::kMotionDim},
              std::vector<double>(style.offset.begin(), style.offset.end()));
        c.put_scalar("speaker/" + pad4(s) + "/tau", style.tau);
    }
    for (std::size_t k = 0; k < data.clips.size(); ++k) {
        const synth::SpeakerClip& clip = data.clips[k];
        const std::string base = "clip/" + pad4(k) + "/";
        c.put_scalar(base + "speaker", static_cast<double>(clip.speaker));
        c.put_scalar(base + "held_out", clip.held_out ? 1.0 : 0.0);
        c.put(base + "audio", clip.audio.frames);
        c.put(base + "motion", clip.motion.frames);
    }
    io::save_container(path, c);
}

synth::SpeakerDataset load_speaker_dataset(const fs::path& path) {
    const Container c = io::load_container(path);
    synth::SpeakerDataset data;
    const auto n_speakers = static_cast<std::size_t>(c.scalar_value("meta/n_speakers"));
    data.clips_per_speaker = static_cast<std::size_t>(c.scalar_value("meta/clips_per_speaker"));
    data.frames_per_clip = static_cast<std::size_t>(c.scalar_value("meta/frames_per_clip"));
    for (std::size_t s = 0; s < n_speakers; ++s) {
        synth::SpeakerStyle style;
        const auto& gain = c.get("speaker/" + pad4(s) + "/gain").data;
        const auto& offset = c.get("speaker/" + pad4(s) + "/offset").data;
        std::copy(gain.begin(), gain.end(), style.gain.begin());
        std::copy(offset.begin(), offset.end(), style.offset.begin());
        style.tau = c.scalar_value("speaker/" + pad4(s) + "/tau");
        data.styles.push_back(style);
    }
    const std::size_t n_clips = n_speakers * data.clips_per_speaker;
    for (std::size_t k = 0; k < n_clips; ++k) {
        const std::string base = "clip/" + pad4(k) + "/";
        synth::SpeakerClip clip;
        clip.speaker = static_cast<std::size_t>(c.scalar_value(base + "speaker"));
        clip.held_out = c.scalar_value(base + "held_out") != 0.0;
        clip.audio.frames = c.tensor(base + "audio");
        clip.motion.frames = c.tensor(base + "motion");
        data.clips.push_back(std::move(clip));
    }
    return data;
}

void save_identity_world(const fs::path& path, const synth::IdentityWorld& world,
                         std::uint64_t seed, const std::string& echo) {
    Container c;
    c.seed = seed;
    c.config_echo = echo;
    c.put_scalar("meta/n_identities", static_cast<double>(world.clips.size()));
    for (std::size_t i = 0; i < world.clips.size(); ++i) {
        const synth::IdentityClip& clip = world.clips[i];
        const std::string base = "identity/" + pad4(i) + "/";
        c.put(base + "code", {8},
              std::vector<double>(clip.identity.code.begin(), clip.identity.code.end()));
        c.put(base + "frames", clip.frames);
        c.put(base + "conds", {clip.conds.size()}, clip.conds);
    }
    io::save_container(path, c);
}

synth::IdentityWorld load_identity_world(const fs::path& path) {
    const Container c = io::load_container(path);
    synth::IdentityWorld world;
    const auto n = static_cast<std::size_t>(c.scalar_value("meta/n_identities"));
    for (std::size_t i = 0; i < n; ++i) {
        const std::string base = "identity/" + pad4(i) + "/";
        synth::IdentityClip clip;
        const auto& code = c.get(base + "code").data;
        std::copy(code.begin(), code.end(), clip.identity.code.begin());
        clip.frames = c.tensor(base + "frames");
        clip.conds = c.get(base + "conds").data;
        world.clips.push_back(std::move(clip));
    }
    return world;
}

// --- checkpoints ---

void save_sync_checkpoint(const fs::path& path, const icsa2m::SyncScorer& scorer,
                          std::uint64_t seed, const std::string& echo) {
    Container c;
    c.seed = seed;
    c.config_echo = echo;
    const auto& cfg = scorer.config();
    c.put_scalar("meta/window", static_cast<double>(cfg.window));
    c.put_scalar("meta/stride", static_cast<double>(cfg.stride));
    c.put_scalar("meta/hidden", static_cast<double>(cfg.hidden));
    c.put_scalar("meta/min_shift", static_cast<double>(cfg.min_shift));
    c.put_scalar("meta/audio_dim", static_cast<double>(scorer.audio_dim()));
    c.put_scalar("meta/motion_dim", static_cast<double>(scorer.motion_dim()));
    store_params(c, "param/", scorer.named_params());
    io::save_container(path, c);
}

icsa2m::SyncScorer load_sync_checkpoint(const fs::path& path) {
    const Container c = io::load_container(path);
    icsa2m::SyncScorerConfig cfg;
    cfg.window = static_cast<std::size_t>(c.scalar_value("meta/window"));
    cfg.stride = static_cast<std::size_t>(c.scalar_value("meta/stride"));
    cfg.hidden = static_cast<std::size_t>(c.scalar_value("meta/hidden"));
    cfg.min_shift = static_cast<std::size_t>(c.scalar_value("meta/min_shift"));
    Rng rng(0);
    icsa2m::SyncScorer scorer(cfg, static_cast<std::size_t>(c.scalar_value("meta/audio_dim")),
                              static_cast<std::size_t>(c.scalar_value("meta/motion_dim")), rng);
    load_params_into(c, "param/", scorer.named_params());
    scorer.freeze();
    return scorer;
}

void save_a2m_checkpoint(const fs::path& path, const icsa2m::StylizedMotionModel& model,
                         const Adam& opt, std::size_t next_step, std::uint64_t seed,
                         const std::string& echo) {
    Container c;
    c.seed = seed;
    c.config_echo = echo;
    const icsa2m::ModelConfig& mc = model.config();
    c.put_scalar("meta/motion_dim", static_cast<double>(mc.motion_dim));
    c.put_scalar("meta/audio_dim", static_cast<double>(mc.audio_dim));
    c.put_scalar("meta/max_frames", static_cast<double>(mc.max_frames));
    c.put_scalar("meta/hidden", static_cast<double>(mc.transformer.hidden));
    c.put_scalar("meta/layers", static_cast<double>(mc.transformer.layers));
    c.put_scalar("meta/heads", static_cast<double>(mc.transformer.heads));
    c.put_scalar("meta/head_dim", static_cast<double>(mc.transformer.head_dim));
    c.put_scalar("meta/mlp_layers", static_cast<double>(mc.transformer.mlp_layers));
    c.put_scalar("meta/next_step", static_cast<double>(next_step));
    const nn::NamedParams params = model.named_params();
    store_params(c, "param/", params);
    store_adam(c, opt, params);
    io::save_container(path, c);
}

A2mCheckpoint load_a2m_checkpoint(const fs::path& path) {
    const Container c = io::load_container(path);
    icsa2m::ModelConfig mc;
    mc.motion_dim = static_cast<std::size_t>(c.scalar_value("meta/motion_dim"));
    mc.audio_dim = static_cast<std::size_t>(c.scalar_value("meta/audio_dim"));
    mc.max_frames = static_cast<std::size_t>(c.scalar_value("meta/max_frames"));
    mc.transformer.hidden = static_cast<std::size_t>(c.scalar_value("meta/hidden"));
    mc.transformer.layers = static_cast<std::size_t>(c.scalar_value("meta/layers"));
    mc.transformer.heads = static_cast<std::size_t>(c.scalar_value("meta/heads"));
    mc.transformer.head_dim = static_cast<std::size_t>(c.scalar_value("meta/head_dim"));
    mc.transformer.mlp_layers = static_cast<std::size_t>(c.scalar_value("meta/mlp_layers"));

    A2mCheckpoint out;
    Rng rng(0);
    out.model = icsa2m::StylizedMotionModel(mc, rng);
    const nn::NamedParams params = out.model.named_params();
    load_params_into(c, "param/", params);
    out.next_step = static_cast<std::size_t>(c.scalar_value("meta/next_step"));
    out.seed = c.seed;
    out.adam_steps = static_cast<std::size_t>(c.scalar_value("adam/steps"));
    for (const auto& [name, tensor] : params) {
        out.adam_m.emplace_back(name, c.get("adam/m/" + name).data);
        out.adam_v.emplace_back(name, c.get("adam/v/" + name).data);
    }
    return out;
}

void save_renderer_checkpoint(const fs::path& path, const sdh::GenericRenderer& renderer,
                              std::uint64_t seed, const std::string& echo) {
    Container c;
    c.seed = seed;
    c.config_echo = echo;
    const sdh::RendererConfig& rc = renderer.config();
    c.put_scalar("meta/enc_hidden", static_cast<double>(rc.enc_hidden));
    c.put_scalar("meta/dec_hidden", static_cast<double>(rc.dec_hidden));
    store_params(c, "param/", renderer.named_params());
    io::save_container(path, c);
}

sdh::GenericRenderer load_renderer_checkpoint(const fs::path& path) {
    const Container c = io::load_container(path);
    sdh::RendererConfig rc;
    rc.enc_hidden = static_cast<std::size_t>(c.scalar_value("meta/enc_hidden"));
    rc.dec_hidden = static_cast<std::size_t>(c.scalar_value("meta/dec_hidden"));
    Rng rng(0);
    sdh::GenericRenderer renderer(rc, rng);
    load_params_into(c, "param/", renderer.named_params());
    return renderer;
}

// --- evaluation helpers ---

StyleTrialStats run_style_trials(const icsa2m::StylizedMotionModel& model,
                                 const synth::SpeakerDataset& data, double cfg_w,
                                 const flow::SolverConfig& solver, std::size_t trials,
                                 std::size_t trial_frames, std::size_t prompt_frames,
                                 std::uint64_t seed) {
    if (data.styles.size() < 2) throw ValueError("style trials need at least two speakers");
    std::vector<std::uint8_t> wins(trials, 0);
    std::vector<double> errs(trials, 0.0);

    parallel_for(trials, [&](std::size_t trial) {
        NoGradGuard guard;
        Rng rng(mix_seed(seed, trial));
        const std::size_t speaker = rng.index(data.styles.size());

        const auto held = data.clips_of(speaker, true);
        const auto source = held.empty() ? data.clips_of(speaker, false) : held;
        const synth::SpeakerClip& ref = data.clips[source[rng.index(source.size())]];
        const std::size_t p_frames = std::min(prompt_frames, ref.audio.length());
        const std::size_t p_offset = rng.index(ref.audio.length() - p_frames + 1);
        icsa2m::StylePrompt prompt;
        prompt.audio = AudioFeatures{slice_rows(ref.audio.frames, p_offset, p_frames)};
        prompt.motion = MotionSequence{slice_rows(ref.motion.frames, p_offset, p_frames)};
        prompt.present = true;

        AudioFeatures driving = synth::gen_audio(trial_frames, rng);
        MotionSequence generated =
            icsa2m::infer_stylized(model, driving, prompt, cfg_w, solver, rng);
        const synth::StyleEstimate est = synth::recover_style(driving, generated);

        std::size_t other = rng.index(data.styles.size() - 1);
        if (other >= speaker) ++other;
        synth::SpeakerStyle recovered;
        recovered.gain = est.style.gain;
        const double d_self = synth::gain_distance(recovered, data.styles[speaker]);
        const double d_other = synth::gain_distance(recovered, data.styles[other]);
        wins[trial] = d_self < d_other ? 1 : 0;
        errs[trial] = d_self;
    });

    StyleTrialStats stats;
    stats.trials = trials;
    for (std::size_t i = 0; i < trials; ++i) {
        stats.wins += wins[i];
        stats.mean_gain_err += errs[i];
    }
    stats.mean_gain_err /= static_cast<double>(std::max<std::size_t>(trials, 1));
    return stats;
}

double generated_sync_accuracy(const icsa2m::StylizedMotionModel& model,
                               const synth::SpeakerDataset& data,
                               const icsa2m::SyncScorer& scorer,
                               const flow::SolverConfig& solver, std::size_t clips,
                               std::size_t frames, std::size_t prompt_frames,
                               std::uint64_t seed) {
    std::vector<std::size_t> held;
    for (std::size_t i = 0; i < data.clips.size(); ++i) {
        if (data.clips[i].held_out) held.push_back(i);
    }
    if (held.empty()) throw ValueError("generated_sync_accuracy: no held-out clips");
    clips = std::min(clips, held.size());

    std::vector<std::pair<AudioFeatures, MotionSequence>> pairs(clips);
    parallel_for(clips, [&](std::size_t k) {
        NoGradGuard guard;
        Rng rng(mix_seed(seed, 0x6e0 + k));
        const synth::SpeakerClip& clip = data.clips[held[k]];
        const std::size_t use = std::min(frames, clip.audio.length());
        AudioFeatures driving{slice_rows(clip.audio.frames, 0, use)};

        const auto train_clips = data.clips_of(clip.speaker, false);
        const synth::SpeakerClip& ref = data.clips[train_clips[rng.index(train_clips.size())]];
        const std::size_t p_frames = std::min(prompt_frames, ref.audio.length());
        const std::size_t p_offset = rng.index(ref.audio.length() - p_frames + 1);
        icsa2m::StylePrompt prompt;
        prompt.audio = AudioFeatures{slice_rows(ref.audio.frames, p_offset, p_frames)};
        prompt.motion = MotionSequence{slice_rows(ref.motion.frames, p_offset, p_frames)};

        MotionSequence generated = icsa2m::infer_stylized(model, driving, prompt, 0.0, solver, rng);
        pairs[k] = {driving, generated};
    });
    return icsa2m::sync_ranking_accuracy(scorer, pairs, 40 * clips, mix_seed(seed, 0xacc));
}

// --- commands ---

namespace {

struct CliOptions {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string out;
    bool emit_csv = false;
    std::string prompt_path;
    std::string audio_path;
    std::string resume_path;
    double cfg_w = -1.0;
    bool cfg_w_given = false;
    long ode_steps = -1;
    std::string ode_method;
};

RunConfig resolve_config(const CliOptions& opts) {
    RunConfig cfg;
    if (!opts.config_path.empty()) cfg = io::config_from_kv(io::load_config_file(opts.config_path));
    if (opts.seed_given) {
        cfg.seed = opts.seed;
        cfg.seed_set = true;
    }
    if (!opts.out.empty()) cfg.out = opts.out;
    if (opts.cfg_w_given) cfg.cfg_w = opts.cfg_w;
    if (opts.ode_steps > 0) cfg.solver.steps = static_cast<std::size_t>(opts.ode_steps);
    if (!opts.ode_method.empty()) cfg.solver.method = flow::parse_ode_method(opts.ode_method);
    if (!cfg.seed_set) throw ValueError("a seed is mandatory; pass --seed or set run.seed");
    cfg.solver.validate();
    return cfg;
}

void write_loss_csv(const fs::path& path, const std::vector<icsa2m::StepLog>& log) {
    CsvWriter csv(path, {"step", "total", "cfm", "sync", "wall_ms"});
    for (const auto& row : log) {
        csv.row({CsvWriter::num(row.step), CsvWriter::num(row.total), CsvWriter::num(row.cfm),
                 CsvWriter::num(row.sync), CsvWriter::num(row.wall_ms)});
    }
}

int cmd_gen_data(const RunConfig& cfg) {
    const fs::path out = cfg.out_dir();
    fs::create_directories(out);
    const std::string echo = io::config_echo(cfg);

    Rng speaker_rng(mix_seed(cfg.seed, 0xda7a));
    synth::SpeakerDataset data = synth::gen_speaker_dataset(
        cfg.speakers, cfg.clips_per_speaker, cfg.frames_per_clip, speaker_rng);
    save_speaker_dataset(out / "speakers.mtlk", data, cfg.seed, echo);

    Rng identity_rng(mix_seed(cfg.seed, 0x1de0));
    synth::IdentityWorld world =
        synth::gen_identity_world(cfg.identities, cfg.identity_frames, identity_rng);
    save_identity_world(out / "identities.mtlk", world, cfg.seed, echo);

    // ready-to-use sample inputs: fresh driving audio and a reference pair
    Rng audio_rng(mix_seed(cfg.seed, 0xa0d0));
    AudioFeatures example = synth::gen_audio(cfg.eval_trial_frames, audio_rng);
    Container audio_file;
    audio_file.seed = cfg.seed;
    audio_file.config_echo = echo;
    audio_file.put("audio", example.frames);
    io::save_container(out / "example_audio.mtlk", audio_file);

    const auto held0 = data.clips_of(0, true);
    const synth::SpeakerClip& ref = data.clips[held0.front()];
    Container prompt_file;
    prompt_file.seed = cfg.seed;
    prompt_file.config_echo = echo;
    const std::size_t p_len = std::min(cfg.prompt_frames, ref.audio.length());
    prompt_file.put("audio", slice_rows(ref.audio.frames, 0, p_len));
    prompt_file.put("motion", slice_rows(ref.motion.frames, 0, p_len));
    io::save_container(out / "example_prompt.mtlk", prompt_file);

    nlohmann::json manifest;
    manifest["seed"] = cfg.seed;
    manifest["n_speakers"] = data.styles.size();
    manifest["clips_per_speaker"] = data.clips_per_speaker;
    manifest["frames_per_clip"] = data.frames_per_clip;
    manifest["n_identities"] = world.clips.size();
    manifest["identity_frames"] = cfg.identity_frames;
    nlohmann::json clips = nlohmann::json::array();
    for (std::size_t k = 0; k < data.clips.size(); ++k) {
        clips.push_back({{"id", k},
                         {"speaker", data.clips[k].speaker},
                         {"held_out", data.clips[k].held_out},
                         {"frames", data.clips[k].audio.length()}});
    }
    manifest["clips"] = std::move(clips);
    manifest["files"] = {{"speakers", "speakers.mtlk"},
                         {"identities", "identities.mtlk"},
                         {"example_audio", "example_audio.mtlk"},
                         {"example_prompt", "example_prompt.mtlk"}};
    std::ofstream mf(out / "manifest.json");
    mf << manifest.dump(2) << "\n";

    std::cout << "wrote " << (out / "speakers.mtlk").string() << " ("
              << data.clips.size() << " clips), " << (out / "identities.mtlk").string() << " ("
              << world.clips.size() << " identities)\n";
    return kExitOk;
}

int cmd_train_sync(const RunConfig& cfg, const CliOptions& opts) {
    if (!opts.resume_path.empty()) {
        throw ValueError("train-sync does not support --resume (runs are seconds long)");
    }
    const fs::path out = cfg.out_dir();
    require_file(out / "speakers.mtlk", "gen-data");
    synth::SpeakerDataset data = load_speaker_dataset(out / "speakers.mtlk");

    icsa2m::SyncScorerConfig scorer_cfg;
    scorer_cfg.window = cfg.sync_window;
    scorer_cfg.stride = cfg.sync_stride;
    scorer_cfg.hidden = cfg.sync_hidden;
    scorer_cfg.min_shift = cfg.sync_min_shift;
    icsa2m::SyncTrainConfig train_cfg;
    train_cfg.steps = cfg.sync_steps;
    train_cfg.batch = cfg.sync_batch;
    train_cfg.lr = cfg.sync_lr;
    train_cfg.seed = mix_seed(cfg.seed, 0x57);

    icsa2m::SyncScorer scorer = icsa2m::train_sync_scorer(data, scorer_cfg, train_cfg);
    save_sync_checkpoint(out / "sync.ckpt", scorer, cfg.seed, io::config_echo(cfg));

    std::vector<std::pair<AudioFeatures, MotionSequence>> held;
    for (const synth::SpeakerClip& clip : data.clips) {
        if (clip.held_out) held.emplace_back(clip.audio, clip.motion);
    }
    const double acc =
        icsa2m::sync_ranking_accuracy(scorer, held, 400, mix_seed(cfg.seed, 0xe0a));
    CsvWriter csv(out / "sync_metrics.csv", {"metric", "value"});
    csv.row({"held_out_ranking_accuracy", CsvWriter::num(acc)});
    std::cout << "sync scorer held-out ranking accuracy: " << acc << "\n";
    return kExitOk;
}

int cmd_train_a2m(const RunConfig& cfg, const CliOptions& opts) {
    const fs::path out = cfg.out_dir();
    require_file(out / "speakers.mtlk", "gen-data");
    synth::SpeakerDataset data = load_speaker_dataset(out / "speakers.mtlk");

    icsa2m::SyncScorer scorer;
    const icsa2m::SyncScorer* scorer_ptr = nullptr;
    if (cfg.lambda_sync > 0.0) {
        require_file(out / "sync.ckpt", "train-sync");
        scorer = load_sync_checkpoint(out / "sync.ckpt");
        scorer_ptr = &scorer;
    }

    icsa2m::TrainConfig train_cfg;
    train_cfg.steps = cfg.train_steps;
    train_cfg.lr = cfg.train_lr;
    train_cfg.lambda_sync = cfg.lambda_sync;
    train_cfg.p_drop = cfg.p_drop;
    train_cfg.prompt_frames = cfg.prompt_frames;
    train_cfg.min_target = cfg.min_target;
    train_cfg.max_target = cfg.max_target;
    train_cfg.seed = mix_seed(cfg.seed, 0xa2);
    train_cfg.log_interval = cfg.log_interval;

    icsa2m::StylizedMotionModel model;
    std::unique_ptr<Adam> opt;
    if (!opts.resume_path.empty()) {
        A2mCheckpoint ckpt = load_a2m_checkpoint(opts.resume_path);
        model = ckpt.model;
        opt = std::make_unique<Adam>(nn::values_of(model.named_params()),
                                     AdamConfig{train_cfg.lr});
        load_adam(io::load_container(opts.resume_path), *opt, model.named_params());
        train_cfg.start_step = ckpt.next_step;
    } else {
        Rng rng(mix_seed(cfg.seed, 0xa2b));
        model = icsa2m::StylizedMotionModel(model_config_from(cfg), rng);
        opt = std::make_unique<Adam>(model.params(), AdamConfig{train_cfg.lr});
    }

    const auto log = icsa2m::train_icsa2m(model, *opt, data, scorer_ptr, train_cfg);
    save_a2m_checkpoint(out / "a2m.ckpt", model, *opt, train_cfg.steps, cfg.seed,
                        io::config_echo(cfg));
    write_loss_csv(out / "a2m_loss.csv", log);
    if (!log.empty()) {
        std::cout << "final loss total=" << log.back().total << " cfm=" << log.back().cfm
                  << " sync=" << log.back().sync << "\n";
    }
    return kExitOk;
}

int cmd_adapt(const RunConfig& cfg, const CliOptions& opts) {
    const fs::path out = cfg.out_dir();
    require_file(out / "identities.mtlk", "gen-data");
    synth::IdentityWorld world = load_identity_world(out / "identities.mtlk");
    const std::string echo = io::config_echo(cfg);

    sdh::GenericRenderer renderer;
    if (fs::exists(out / "renderer.ckpt")) {
        renderer = load_renderer_checkpoint(out / "renderer.ckpt");
    } else {
        sdh::PretrainConfig pre;
        pre.steps = cfg.pretrain_steps;
        pre.batch = cfg.pretrain_batch;
        pre.hold_out = cfg.pretrain_hold_out;
        pre.seed = mix_seed(cfg.seed, 0x93);
        renderer = sdh::pretrain_generic(world, renderer_config_from(cfg), pre);
        save_renderer_checkpoint(out / "renderer.ckpt", renderer, cfg.seed, echo);
    }

    // target identity: the last clip, held out of pretraining
    const synth::IdentityClip& clip = world.clips.back();
    sdh::AdaptConfig adapt_cfg;
    adapt_cfg.inversion = cfg.adapt_inversion;
    adapt_cfg.lora = cfg.adapt_lora;
    adapt_cfg.iters = cfg.adapt_iters;
    adapt_cfg.lr = cfg.adapt_lr;
    adapt_cfg.lora_rank = cfg.lora_rank;
    adapt_cfg.lora_alpha = cfg.lora_alpha;
    adapt_cfg.seed = mix_seed(cfg.seed, 0xad);
    adapt_cfg.log_interval = cfg.log_interval;

    sdh::AdaptSession session = sdh::create_adapt_session(renderer, clip, adapt_cfg);
    if (!opts.resume_path.empty()) {
        const Container ckpt = io::load_container(opts.resume_path);
        Tensor grid = session.state.grid.values;
        grid.values_mut() = ckpt.get("grid").data;
        nn::NamedParams lora_params;
        if (session.state.loras) session.state.loras->collect(lora_params);
        for (const auto& [name, tensor] : lora_params) {
            Tensor t = tensor;
            t.values_mut() = ckpt.get("param/" + name).data;
        }
        nn::NamedParams opt_params;
        if (adapt_cfg.inversion) opt_params.emplace_back("grid", session.state.grid.values);
        for (const auto& p : lora_params) opt_params.push_back(p);
        load_adam(ckpt, *session.opt, opt_params);
        adapt_cfg.start_step = static_cast<std::size_t>(ckpt.scalar_value("meta/next_step"));
    }
    sdh::run_adaptation(session, clip, adapt_cfg);

    Container ckpt;
    ckpt.seed = cfg.seed;
    ckpt.config_echo = echo;
    ckpt.put("grid", session.state.grid.values);
    nn::NamedParams lora_params;
    if (session.state.loras) session.state.loras->collect(lora_params);
    store_params(ckpt, "param/", lora_params);
    nn::NamedParams opt_params;
    if (adapt_cfg.inversion) opt_params.emplace_back("grid", session.state.grid.values);
    for (const auto& p : lora_params) opt_params.push_back(p);
    store_adam(ckpt, *session.opt, opt_params);
    ckpt.put_scalar("meta/next_step", static_cast<double>(adapt_cfg.iters));
    ckpt.put_scalar("meta/inversion", adapt_cfg.inversion ? 1.0 : 0.0);
    ckpt.put_scalar("meta/lora", adapt_cfg.lora ? 1.0 : 0.0);
    ckpt.put_scalar("meta/train_frames", static_cast<double>(session.state.train_frames));
    io::save_container(out / "adapt.ckpt", ckpt);

    CsvWriter csv(out / "adapt_loss.csv", {"step", "loss", "wall_ms"});
    for (const auto& row : session.state.log) {
        csv.row({CsvWriter::num(row.step), CsvWriter::num(row.loss), CsvWriter::num(row.wall_ms)});
    }

    const sdh::EvalMetrics metrics = sdh::eval_held_out(session.state, clip);
    std::cout << "held-out psnr=" << metrics.psnr << " l1=" << metrics.l1 << "\n";
    return kExitOk;
}

int cmd_sample(const RunConfig& cfg, const CliOptions& opts) {
    const fs::path out = cfg.out_dir();
    require_file(out / "a2m.ckpt", "train-a2m");
    if (opts.audio_path.empty()) throw ValueError("sample: --audio PATH is required");
    require_file(opts.audio_path, "gen-data");

    A2mCheckpoint ckpt = load_a2m_checkpoint(out / "a2m.ckpt");
    const Container audio_file = io::load_container(opts.audio_path);
    AudioFeatures driving{audio_file.tensor("audio")};

    const bool stylized = !opts.prompt_path.empty();
    Rng rng(mix_seed(cfg.seed, 0x5a));
    MotionSequence motion;
    if (stylized) {
        require_file(opts.prompt_path, "gen-data");
        const Container prompt_file = io::load_container(opts.prompt_path);
        icsa2m::StylePrompt prompt;
        prompt.audio = AudioFeatures{prompt_file.tensor("audio")};
        prompt.motion = MotionSequence{prompt_file.tensor("motion")};
        if (prompt.audio.length() != prompt.motion.length()) {
            throw ValueError("sample: prompt audio/motion are misaligned");
        }
        motion = icsa2m::infer_stylized(ckpt.model, driving, prompt, cfg.cfg_w, cfg.solver, rng);
    } else {
        motion = icsa2m::infer_unstylized(ckpt.model, driving, cfg.solver, rng);
    }

    Container result;
    result.seed = cfg.seed;
    result.config_echo = io::config_echo(cfg);
    result.put("motion", motion.frames);
    result.put_scalar("meta/stylized", stylized ? 1.0 : 0.0);
    result.put_scalar("meta/cfg_w", stylized ? cfg.cfg_w : 0.0);
    io::save_container(out / "motion.mtlk", result);

    if (opts.emit_csv) {
        std::vector<std::string> cols{"frame"};
        for (std::size_t d = 0; d < motion.dim(); ++d) cols.push_back("d" + std::to_string(d));
        CsvWriter csv(out / "motion.csv", cols);
        for (std::size_t f = 0; f < motion.length(); ++f) {
            std::vector<std::string> cells{CsvWriter::num(f)};
            for (std::size_t d = 0; d < motion.dim(); ++d) {
                cells.push_back(CsvWriter::num(motion.frames.at(f, d)));
            }
            csv.row(cells);
        }
    }
    std::cout << "wrote " << (out / "motion.mtlk").string() << " ("
              << (stylized ? "stylized" : "unstylized") << ", " << motion.length()
              << " frames)\n";
    return kExitOk;
}

int cmd_eval(const RunConfig& cfg) {
    const fs::path out = cfg.out_dir();
    require_file(out / "speakers.mtlk", "gen-data");
    require_file(out / "a2m.ckpt", "train-a2m");
    require_file(out / "sync.ckpt", "train-sync");

    synth::SpeakerDataset data = load_speaker_dataset(out / "speakers.mtlk");
    A2mCheckpoint a2m = load_a2m_checkpoint(out / "a2m.ckpt");
    icsa2m::SyncScorer scorer = load_sync_checkpoint(out / "sync.ckpt");

    CsvWriter csv(out / "metrics.csv", {"metric", "config", "seed", "value"});
    const std::uint64_t seed = mix_seed(cfg.seed, 0xe7a1);

    // style recovery + guidance sweep, paired through the shared trial seed
    for (double w : {0.0, 1.0, 2.0, 4.0}) {
        StyleTrialStats stats =
            run_style_trials(a2m.model, data, w, cfg.solver, cfg.eval_trials,
                             cfg.eval_trial_frames, cfg.prompt_frames, seed);
        const std::string config = "w=" + CsvWriter::num(w);
        csv.row({"style_recovery_accuracy", config, CsvWriter::num(cfg.seed),
                 CsvWriter::num(stats.accuracy())});
        csv.row({"style_recovery_mean_gain_err", config, CsvWriter::num(cfg.seed),
                 CsvWriter::num(stats.mean_gain_err)});
    }

    std::vector<std::pair<AudioFeatures, MotionSequence>> held;
    for (const synth::SpeakerClip& clip : data.clips) {
        if (clip.held_out) held.emplace_back(clip.audio, clip.motion);
    }
    csv.row({"sync_ranking_accuracy", "real_pairs", CsvWriter::num(cfg.seed),
             CsvWriter::num(icsa2m::sync_ranking_accuracy(scorer, held, 400,
                                                          mix_seed(cfg.seed, 0x51)))});
    csv.row({"sync_ranking_accuracy", "generated", CsvWriter::num(cfg.seed),
             CsvWriter::num(generated_sync_accuracy(a2m.model, data, scorer, cfg.solver, 8,
                                                    cfg.eval_trial_frames, cfg.prompt_frames,
                                                    mix_seed(cfg.seed, 0x52)))});

    // adaptation ablation table when the renderer stage has run
    if (fs::exists(out / "renderer.ckpt") && fs::exists(out / "identities.mtlk")) {
        sdh::GenericRenderer renderer = load_renderer_checkpoint(out / "renderer.ckpt");
        synth::IdentityWorld world = load_identity_world(out / "identities.mtlk");
        sdh::AdaptConfig adapt_cfg;
        adapt_cfg.iters = cfg.adapt_iters;
        adapt_cfg.lr = cfg.adapt_lr;
        adapt_cfg.lora_rank = cfg.lora_rank;
        adapt_cfg.lora_alpha = cfg.lora_alpha;
        std::vector<std::uint64_t> seeds;
        for (std::size_t i = 0; i < cfg.eval_seeds; ++i) seeds.push_back(mix_seed(cfg.seed, i));
        sdh::AblationReport report =
            sdh::ablation_eval(renderer, world.clips.back(), seeds, adapt_cfg);
        for (const sdh::AblationRow& row : report.rows) {
            csv.row({"adaptation_psnr", row.config, CsvWriter::num(row.seed),
                     CsvWriter::num(row.psnr)});
            csv.row({"adaptation_l1", row.config, CsvWriter::num(row.seed),
                     CsvWriter::num(row.l1)});
        }
    }

    std::cout << "wrote " << (out / "metrics.csv").string() << "\n";
    return kExitOk;
}

int cmd_gradcheck() {
    const auto results = gradcheck::run(gradcheck::standard_suite(), 0x6d5eed);
    bool ok = true;
    for (const auto& r : results) {
        std::cout << "op=" << r.name << " max_rel_err=" << CsvWriter::num(r.max_rel_err)
                  << " tol=" << CsvWriter::num(r.tolerance) << " status="
                  << (r.pass ? "PASS" : "FAIL") << "\n";
        ok = ok && r.pass;
    }
    return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"desk-scale stylized audio-to-motion lab"};
    app.require_subcommand(1);

    CliOptions opts;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config_path, "config file path");
        sub->add_option("--seed", opts.seed, "run seed (mandatory here or in the config)")
            ->each([&](const std::string&) { opts.seed_given = true; });
        sub->add_option("--out", opts.out, "output directory");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate synthetic datasets");
    add_common(gen);
    CLI::App* tsync = app.add_subcommand("train-sync", "train the sync scorer");
    add_common(tsync);
    tsync->add_option("--resume", opts.resume_path, "not supported for this stage");
    CLI::App* ta2m = app.add_subcommand("train-a2m", "train the stylized audio-to-motion model");
    add_common(ta2m);
    ta2m->add_option("--resume", opts.resume_path, "checkpoint to continue from");
    CLI::App* adapt = app.add_subcommand("adapt", "pretrain the renderer and adapt it");
    add_common(adapt);
    adapt->add_option("--resume", opts.resume_path, "checkpoint to continue from");
    CLI::App* sample = app.add_subcommand("sample", "generate motion from audio");
    add_common(sample);
    sample->add_option("--audio", opts.audio_path, "driving audio file (.mtlk)");
    sample->add_option("--prompt", opts.prompt_path, "style prompt file (.mtlk)");
    sample->add_flag("--emit-csv", opts.emit_csv, "also export per-frame CSV");
    sample->add_option("--cfg-w", opts.cfg_w, "guidance scale")
        ->each([&](const std::string&) { opts.cfg_w_given = true; });
    sample->add_option("--ode-steps", opts.ode_steps, "solver steps");
    sample->add_option("--ode-method", opts.ode_method, "euler or midpoint");
    CLI::App* eval = app.add_subcommand("eval", "emit the metrics table");
    add_common(eval);
    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gc->parsed()) return cmd_gradcheck();
        const RunConfig cfg = resolve_config(opts);
        if (gen->parsed()) return cmd_gen_data(cfg);
        if (tsync->parsed()) return cmd_train_sync(cfg, opts);
        if (ta2m->parsed()) return cmd_train_a2m(cfg, opts);
        if (adapt->parsed()) return cmd_adapt(cfg, opts);
        if (sample->parsed()) return cmd_sample(cfg, opts);
        if (eval->parsed()) return cmd_eval(cfg);
        return kExitUsage;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
}

}  // namespace mtlk::cli
