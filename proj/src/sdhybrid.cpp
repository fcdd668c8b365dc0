#include "mtlk/sdhybrid.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace mtlk::sdh {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::vector<double> motion_features(double cond, std::size_t width) {
    std::vector<double> f(width, 0.0);
    f[0] = cond;
    f[1] = 1.0 - cond;
    for (std::size_t k = 1; 2 * k + 1 < width; ++k) {
        f[2 * k] = std::sin(kTwoPi * static_cast<double>(k) * cond);
        f[2 * k + 1] = std::cos(kTwoPi * static_cast<double>(k) * cond);
    }
    return f;
}

std::size_t worker_cap(std::size_t jobs) {
    std::size_t cap = std::thread::hardware_concurrency();
    if (cap == 0) cap = 1;
    if (const char* env = std::getenv("MTLK_THREADS")) {
        const long parsed = std::strtol(env, nullptr, 10);
        if (parsed >= 1) cap = static_cast<std::size_t>(parsed);
    }
    return std::max<std::size_t>(1, std::min(cap, jobs));
}

nn::LinearLayer copy_layer(const nn::LinearLayer& layer) {
    nn::LinearLayer out;
    out.weight = layer.weight.detach();
    out.bias = layer.bias.detach();
    out.trainable = layer.trainable;
    out.weight.set_requires_grad(layer.trainable);
    out.bias.set_requires_grad(layer.trainable);
    return out;
}

std::size_t train_frame_count(std::size_t frames, double hold_out_fraction) {
    const auto held = static_cast<std::size_t>(
        std::floor(hold_out_fraction * static_cast<double>(frames)));
    if (held == 0 || held >= frames) throw ValueError("adapt: degenerate hold-out split");
    return frames - held;
}

EvalMetrics metrics_from_mse_l1(double mse_total, double l1_total, std::size_t count) {
    EvalMetrics m;
    const double mse = mse_total / static_cast<double>(count);
    m.l1 = l1_total / static_cast<double>(count);
    m.psnr = 10.0 * std::log10(1.0 / std::max(mse, 1e-12));
    return m;
}

}  // namespace

void LoraSet::collect(nn::NamedParams& out) const {
    gate.collect("lora.gate", out);
    d1.collect("lora.d1", out);
    d2.collect("lora.d2", out);
    d3.collect("lora.d3", out);
}

GenericRenderer::GenericRenderer(const RendererConfig& cfg, Rng& rng) : cfg_(cfg) {
    e1_ = nn::LinearLayer::init(cfg.image_pixels, cfg.enc_hidden, rng);
    e2_ = nn::LinearLayer::init(cfg.enc_hidden, cfg.enc_hidden, rng);
    e3_ = nn::LinearLayer::init(cfg.enc_hidden, cfg.grid_size(), rng);
    gate_ = nn::LinearLayer::init(cfg.motion_features, cfg.grid_size(), rng);
    d1_ = nn::LinearLayer::init(cfg.grid_size() + cfg.motion_features, cfg.dec_hidden, rng);
    d2_ = nn::LinearLayer::init(cfg.dec_hidden, cfg.dec_hidden, rng);
    d3_ = nn::LinearLayer::init(cfg.dec_hidden, cfg.image_pixels, rng);
}

Tensor GenericRenderer::encode(const Tensor& images) const {
    if (images.cols() != cfg_.image_pixels) throw ShapeError("encode: pixel width mismatch");
    return e3_.forward(gelu(e2_.forward(gelu(e1_.forward(images)))));
}

Tensor GenericRenderer::decode(const Tensor& grids, const std::vector<double>& conds,
                               const LoraSet* loras) const {
    if (grids.cols() != cfg_.grid_size()) throw ShapeError("decode: grid width mismatch");
    if (grids.rows() != conds.size()) throw ShapeError("decode: one motion scalar per grid row");
    for (double c : conds) {
        if (c < 0.0 || c > 1.0) throw ValueError("decode: motion condition out of [0,1]");
    }
    std::vector<double> feats(conds.size() * cfg_.motion_features);
    for (std::size_t i = 0; i < conds.size(); ++i) {
        const auto f = motion_features(conds[i], cfg_.motion_features);
        std::copy(f.begin(), f.end(), feats.begin() + i * cfg_.motion_features);
    }
    Tensor cond_rows = Tensor::from_data({conds.size(), cfg_.motion_features}, std::move(feats));
    // motion-gated grid: per-channel gates in (0,2) modulate the static
    // features before the dense stack
    Tensor gate_pre = loras ? loras->gate.forward(cond_rows) : gate_.forward(cond_rows);
    Tensor gate = add_scalar(tanh_act(gate_pre), 1.0);
    Tensor z = mul(grids, gate);
    Tensor h = concat_cols({z, cond_rows});
    if (loras != nullptr) {
        h = gelu(loras->d1.forward(h));
        h = gelu(loras->d2.forward(h));
        return sigmoid(loras->d3.forward(h));
    }
    h = gelu(d1_.forward(h));
    h = gelu(d2_.forward(h));
    return sigmoid(d3_.forward(h));
}

GenericRenderer GenericRenderer::clone() const {
    GenericRenderer out;
    out.cfg_ = cfg_;
    out.e1_ = copy_layer(e1_);
    out.e2_ = copy_layer(e2_);
    out.e3_ = copy_layer(e3_);
    out.gate_ = copy_layer(gate_);
    out.d1_ = copy_layer(d1_);
    out.d2_ = copy_layer(d2_);
    out.d3_ = copy_layer(d3_);
    return out;
}

void GenericRenderer::freeze() {
    e1_.set_trainable(false);
    e2_.set_trainable(false);
    e3_.set_trainable(false);
    gate_.set_trainable(false);
    d1_.set_trainable(false);
    d2_.set_trainable(false);
    d3_.set_trainable(false);
}

nn::NamedParams GenericRenderer::named_params() const {
    nn::NamedParams out;
    e1_.collect("enc.l1", out);
    e2_.collect("enc.l2", out);
    e3_.collect("enc.l3", out);
    gate_.collect("dec.gate", out);
    d1_.collect("dec.l1", out);
    d2_.collect("dec.l2", out);
    d3_.collect("dec.l3", out);
    return out;
}

const nn::LinearLayer& GenericRenderer::decoder_layer(std::size_t i) const {
    switch (i) {
        case 0: return gate_;
        case 1: return d1_;
        case 2: return d2_;
        case 3: return d3_;
        default: throw ValueError("decoder_layer: index out of range");
    }
}

LoraSet GenericRenderer::inject_loras(std::size_t rank, double alpha, Rng& rng) const {
    LoraSet set;
    set.gate = nn::LoraAdapter::inject(gate_, rank, alpha, rng);
    set.d1 = nn::LoraAdapter::inject(d1_, rank, alpha, rng);
    set.d2 = nn::LoraAdapter::inject(d2_, rank, alpha, rng);
    set.d3 = nn::LoraAdapter::inject(d3_, rank, alpha, rng);
    return set;
}

GenericRenderer pretrain_generic(const synth::IdentityWorld& world, const RendererConfig& cfg,
                                 const PretrainConfig& train) {
    if (world.clips.size() < 50) {
        throw ValueError("pretrain_generic: need an identity world with >= 50 identities");
    }
    if (train.hold_out + 2 > world.clips.size()) {
        throw ValueError("pretrain_generic: hold-out leaves no training identities");
    }
    const std::size_t n_train = world.clips.size() - train.hold_out;

    Rng init_rng(mix_seed(train.seed, 0x9e7));
    GenericRenderer renderer(cfg, init_rng);
    Adam opt(renderer.params(), {train.lr});

    for (std::size_t step = 0; step < train.steps; ++step) {
        Rng rng(mix_seed(train.seed, step));
        std::vector<Tensor> src_rows, tgt_rows;
        std::vector<double> conds;
        for (std::size_t b = 0; b < train.batch; ++b) {
            const synth::IdentityClip& clip = world.clips[rng.index(n_train)];
            const std::size_t f = rng.index(clip.frames.rows());
            NoGradGuard guard;
            src_rows.push_back(slice_rows(clip.frames, 0, 1));
            tgt_rows.push_back(slice_rows(clip.frames, f, 1));
            conds.push_back(clip.conds[f]);
        }
        Tensor src = concat_rows(src_rows);
        Tensor target = concat_rows(tgt_rows);
        Tensor grids = renderer.encode(src);
        Tensor pred = renderer.decode(grids, conds);
        Tensor loss = mean_abs_error(pred, target);
        opt.zero_grad();
        loss.backward();
        opt.step();
    }
    return renderer;
}

double reconstruction_l1(const GenericRenderer& renderer, const synth::IdentityClip& clip) {
    NoGradGuard guard;
    Tensor grid = renderer.encode(slice_rows(clip.frames, 0, 1));
    const std::size_t frames = clip.frames.rows();
    double total = 0.0;
    for (std::size_t f = 0; f < frames; ++f) {
        Tensor pred = renderer.decode(grid, {clip.conds[f]});
        Tensor target = slice_rows(clip.frames, f, 1);
        total += mean_abs_error(pred, target).item();
    }
    return total / static_cast<double>(frames);
}

FeatureGrid init_inversion(const GenericRenderer& renderer, const Tensor& first_frame) {
    NoGradGuard guard;
    Tensor row = first_frame.ndim() == 1 ? reshape(first_frame, {1, first_frame.size()})
                                         : first_frame;
    if (row.rows() != 1) throw ShapeError("init_inversion: expected a single frame");
    FeatureGrid grid;
    grid.values = renderer.encode(row).detach();
    grid.trainable = false;
    return grid;
}

AdaptSession create_adapt_session(const GenericRenderer& renderer,
                                  const synth::IdentityClip& clip, const AdaptConfig& cfg) {
    if (clip.frames.rows() == 0) throw ValueError("adapt: empty clip");
    if (!cfg.inversion && !cfg.lora) throw ValueError("adapt: no components selected");

    AdaptSession session;
    session.state.renderer = renderer.clone();
    session.state.renderer.freeze();
    session.state.train_frames = train_frame_count(clip.frames.rows(), cfg.hold_out_fraction);

    session.state.grid = init_inversion(session.state.renderer, slice_rows(clip.frames, 0, 1));
    std::vector<Tensor> trainables;
    if (cfg.inversion) {
        session.state.grid.trainable = true;
        session.state.grid.values.set_requires_grad(true);
        trainables.push_back(session.state.grid.values);
    }
    if (cfg.lora) {
        Rng lora_rng(mix_seed(cfg.seed, 0x10a));
        session.state.loras =
            session.state.renderer.inject_loras(cfg.lora_rank, cfg.lora_alpha, lora_rng);
        for (Tensor t : session.state.loras->trainables()) trainables.push_back(t);
    }
    session.opt = std::make_unique<Adam>(trainables, AdamConfig{cfg.lr});
    return session;
}

void run_adaptation(AdaptSession& session, const synth::IdentityClip& clip,
                    const AdaptConfig& cfg) {
    AdaptationResult& result = session.state;
    Adam& opt = *session.opt;
    const auto started = Clock::now();
    const LoraSet* loras = result.loras ? &*result.loras : nullptr;
    for (std::size_t step = cfg.start_step; step < cfg.iters; ++step) {
        Rng rng(mix_seed(cfg.seed, step));
        const std::size_t f = rng.index(result.train_frames);
        Tensor target;
        {
            NoGradGuard guard;
            target = slice_rows(clip.frames, f, 1);
        }
        Tensor pred = result.renderer.decode(result.grid.values, {clip.conds[f]}, loras);
        Tensor loss = mean_abs_error(pred, target);
        if (cfg.lpips_hook) loss = add(loss, scale(cfg.lpips_hook(pred, target), cfg.lambda_lpips));
        if (cfg.id_hook) loss = add(loss, scale(cfg.id_hook(pred, target), cfg.lambda_id));
        opt.zero_grad();
        loss.backward();
        opt.step();
        if (step % cfg.log_interval == 0 || step + 1 == cfg.iters) {
            result.log.push_back({step, loss.item(), elapsed_ms(started)});
        }
    }
}

AdaptationResult sd_hybrid_adapt(const GenericRenderer& renderer, const synth::IdentityClip& clip,
                                 const AdaptConfig& cfg) {
    AdaptSession session = create_adapt_session(renderer, clip, cfg);
    AdaptConfig from_zero = cfg;
    from_zero.start_step = 0;
    run_adaptation(session, clip, from_zero);
    return std::move(session.state);
}

Tensor render(const AdaptationResult& result, double motion_cond) {
    NoGradGuard guard;
    const LoraSet* loras = result.loras ? &*result.loras : nullptr;
    return result.renderer.decode(result.grid.values, {motion_cond}, loras).detach();
}

EvalMetrics eval_held_out(const AdaptationResult& result, const synth::IdentityClip& clip) {
    NoGradGuard guard;
    const std::size_t frames = clip.frames.rows();
    double mse_total = 0.0, l1_total = 0.0;
    std::size_t count = 0;
    for (std::size_t f = result.train_frames; f < frames; ++f) {
        Tensor pred = render(result, clip.conds[f]);
        Tensor target = slice_rows(clip.frames, f, 1);
        mse_total += mse(pred, target).item();
        l1_total += mean_abs_error(pred, target).item();
        ++count;
    }
    if (count == 0) throw ValueError("eval_held_out: no held-out frames");
    return metrics_from_mse_l1(mse_total, l1_total, count);
}

EvalMetrics eval_generic_held_out(const GenericRenderer& renderer,
                                  const synth::IdentityClip& clip, double hold_out_fraction) {
    NoGradGuard guard;
    const std::size_t frames = clip.frames.rows();
    const std::size_t train_frames = train_frame_count(frames, hold_out_fraction);
    Tensor grid = renderer.encode(slice_rows(clip.frames, 0, 1));
    double mse_total = 0.0, l1_total = 0.0;
    std::size_t count = 0;
    for (std::size_t f = train_frames; f < frames; ++f) {
        Tensor pred = renderer.decode(grid, {clip.conds[f]});
        Tensor target = slice_rows(clip.frames, f, 1);
        mse_total += mse(pred, target).item();
        l1_total += mean_abs_error(pred, target).item();
        ++count;
    }
    return metrics_from_mse_l1(mse_total, l1_total, count);
}

AblationReport ablation_eval(const GenericRenderer& renderer, const synth::IdentityClip& clip,
                             const std::vector<std::uint64_t>& seeds, const AdaptConfig& base) {
    struct Job {
        std::string config;
        bool inversion;
        bool lora;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (std::uint64_t seed : seeds) {
        jobs.push_back({"full", true, true, seed});
        jobs.push_back({"no_inversion", false, true, seed});
        jobs.push_back({"no_lora", true, false, seed});
    }

    AblationReport report;
    report.rows.resize(jobs.size());
    const std::size_t workers = worker_cap(jobs.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= jobs.size()) return;
            const Job& job = jobs[k];
            AdaptConfig cfg = base;
            cfg.inversion = job.inversion;
            cfg.lora = job.lora;
            cfg.seed = job.seed;
            AdaptationResult result = sd_hybrid_adapt(renderer, clip, cfg);
            EvalMetrics m = eval_held_out(result, clip);
            report.rows[k] = {job.config, job.seed, m.psnr, m.l1};
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i + 1 < workers; ++i) pool.emplace_back(work);
    work();
    for (std::thread& th : pool) th.join();
    return report;
}

}  // namespace mtlk::sdh
