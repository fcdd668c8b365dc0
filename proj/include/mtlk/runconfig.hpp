#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mtlk/flow.hpp"

namespace mtlk::io {

// Flat "section.key = value" text config. '#' starts a comment.
struct KeyValues {
    std::map<std::string, std::string> entries;

    bool has(const std::string& key) const { return entries.count(key) != 0; }
    const std::string& get(const std::string& key) const;
};

KeyValues parse_config_text(const std::string& text);
KeyValues load_config_file(const std::filesystem::path& path);

// Every knob of the pipeline with its default. File entries override
// defaults; CLI flags override the file.
struct RunConfig {
    // run
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out = "out";

    // data
    std::size_t speakers = 32;
    std::size_t clips_per_speaker = 8;
    std::size_t frames_per_clip = 256;
    std::size_t identities = 60;
    std::size_t identity_frames = 40;

    // model
    std::size_t hidden = 64;
    std::size_t layers = 4;
    std::size_t heads = 4;
    std::size_t head_dim = 16;
    std::size_t mlp_layers = 2;
    std::size_t max_frames = 352;

    // sync scorer
    std::size_t sync_steps = 1500;
    std::size_t sync_batch = 16;
    double sync_lr = 1e-3;
    std::size_t sync_window = 16;
    std::size_t sync_stride = 8;
    std::size_t sync_hidden = 64;
    std::size_t sync_min_shift = 10;

    // motion-model training
    std::size_t train_steps = 6000;
    double train_lr = 1e-3;
    double lambda_sync = 0.05;
    double p_drop = 0.2;
    std::size_t prompt_frames = 64;
    std::size_t min_target = 48;
    std::size_t max_target = 224;
    std::size_t log_interval = 10;

    // adaptation
    bool adapt_inversion = true;
    bool adapt_lora = true;
    std::size_t adapt_iters = 2000;
    double adapt_lr = 1e-3;
    std::size_t lora_rank = 4;
    double lora_alpha = 4.0;
    std::size_t pretrain_steps = 3000;
    std::size_t pretrain_batch = 4;
    std::size_t pretrain_hold_out = 4;
    std::size_t enc_hidden = 128;
    std::size_t dec_hidden = 128;

    // solver / guidance
    flow::SolverConfig solver;
    double cfg_w = 2.0;

    // evaluation
    std::size_t eval_trials = 100;
    std::size_t eval_trial_frames = 160;
    std::size_t eval_seeds = 3;

    std::filesystem::path out_dir() const { return out; }
};

RunConfig config_from_kv(const KeyValues& kv);

// Deterministic text echo of every field, embedded in checkpoints.
std::string config_echo(const RunConfig& cfg);

// Deterministic CSV writing; doubles use shortest-roundtrip formatting.
class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& columns);
    void row(const std::vector<std::string>& cells);
    static std::string num(double value);
    static std::string num(std::size_t value) { return std::to_string(value); }

private:
    std::string buffer_;
    std::filesystem::path path_;
    std::size_t columns_ = 0;

public:
    ~CsvWriter();
    CsvWriter(const CsvWriter&) = delete;
    CsvWriter& operator=(const CsvWriter&) = delete;
};

}  // namespace mtlk::io
