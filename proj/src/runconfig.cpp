#include "mtlk/runconfig.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mtlk::io {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ValueError("config: '" + key + "' expects true/false, got '" + value + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw ValueError("config: '" + key + "' expects an unsigned integer, got '" + value + "'");
    }
    return out;
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double out = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return out;
    } catch (const std::exception&) {
        throw ValueError("config: '" + key + "' expects a number, got '" + value + "'");
    }
}

}  // namespace

const std::string& KeyValues::get(const std::string& key) const {
    auto it = entries.find(key);
    if (it == entries.end()) throw ValueError("config: missing key '" + key + "'");
    return it->second;
}

KeyValues parse_config_text(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ValueError("config: malformed section at line " + std::to_string(line_no));
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValueError("config: expected key = value at line " + std::to_string(line_no));
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ValueError("config: empty key at line " + std::to_string(line_no));
        }
        const std::string full = section.empty() ? key : section + "." + key;
        if (kv.entries.count(full)) throw ValueError("config: duplicate key '" + full + "'");
        kv.entries[full] = value;
    }
    return kv;
}

KeyValues load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValueError("config: cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str());
}

RunConfig config_from_kv(const KeyValues& kv) {
    RunConfig cfg;
    for (const auto& [key, value] : kv.entries) {
        if (key == "run.seed") {
            cfg.seed = parse_u64(key, value);
            cfg.seed_set = true;
        } else if (key == "run.out") {
            cfg.out = value;
        } else if (key == "data.speakers") {
            cfg.speakers = parse_u64(key, value);
        } else if (key == "data.clips_per_speaker") {
            cfg.clips_per_speaker = parse_u64(key, value);
        } else if (key == "data.frames_per_clip") {
            cfg.frames_per_clip = parse_u64(key, value);
        } else if (key == "data.identities") {
            cfg.identities = parse_u64(key, value);
        } else if (key == "data.identity_frames") {
            cfg.identity_frames = parse_u64(key, value);
        } else if (key == "model.hidden") {
            cfg.hidden = parse_u64(key, value);
        } else if (key == "model.layers") {
            cfg.layers = parse_u64(key, value);
        } else if (key == "model.heads") {
            cfg.heads = parse_u64(key, value);
        } else if (key == "model.head_dim") {
            cfg.head_dim = parse_u64(key, value);
        } else if (key == "model.mlp_layers") {
            cfg.mlp_layers = parse_u64(key, value);
        } else if (key == "model.max_frames") {
            cfg.max_frames = parse_u64(key, value);
        } else if (key == "sync.steps") {
            cfg.sync_steps = parse_u64(key, value);
        } else if (key == "sync.batch") {
            cfg.sync_batch = parse_u64(key, value);
        } else if (key == "sync.lr") {
            cfg.sync_lr = parse_double(key, value);
        } else if (key == "sync.window") {
            cfg.sync_window = parse_u64(key, value);
        } else if (key == "sync.stride") {
            cfg.sync_stride = parse_u64(key, value);
        } else if (key == "sync.hidden") {
            cfg.sync_hidden = parse_u64(key, value);
        } else if (key == "sync.min_shift") {
            cfg.sync_min_shift = parse_u64(key, value);
        } else if (key == "train.steps") {
            cfg.train_steps = parse_u64(key, value);
        } else if (key == "train.lr") {
            cfg.train_lr = parse_double(key, value);
        } else if (key == "train.lambda_sync") {
            cfg.lambda_sync = parse_double(key, value);
        } else if (key == "train.p_drop") {
            cfg.p_drop = parse_double(key, value);
        } else if (key == "train.prompt_frames") {
            cfg.prompt_frames = parse_u64(key, value);
        } else if (key == "train.min_target") {
            cfg.min_target = parse_u64(key, value);
        } else if (key == "train.max_target") {
            cfg.max_target = parse_u64(key, value);
        } else if (key == "train.log_interval") {
            cfg.log_interval = parse_u64(key, value);
        } else if (key == "adapt.inversion") {
            cfg.adapt_inversion = parse_bool(key, value);
        } else if (key == "adapt.lora") {
            cfg.adapt_lora = parse_bool(key, value);
        } else if (key == "adapt.iters") {
            cfg.adapt_iters = parse_u64(key, value);
        } else if (key == "adapt.lr") {
            cfg.adapt_lr = parse_double(key, value);
        } else if (key == "adapt.lora_rank") {
            cfg.lora_rank = parse_u64(key, value);
        } else if (key == "adapt.lora_alpha") {
            cfg.lora_alpha = parse_double(key, value);
        } else if (key == "adapt.pretrain_steps") {
            cfg.pretrain_steps = parse_u64(key, value);
        } else if (key == "adapt.pretrain_batch") {
            cfg.pretrain_batch = parse_u64(key, value);
        } else if (key == "adapt.pretrain_hold_out") {
            cfg.pretrain_hold_out = parse_u64(key, value);
        } else if (key == "adapt.enc_hidden") {
            cfg.enc_hidden = parse_u64(key, value);
        } else if (key == "adapt.dec_hidden") {
            cfg.dec_hidden = parse_u64(key, value);
        } else if (key == "solver.method") {
            cfg.solver.method = flow::parse_ode_method(value);
        } else if (key == "solver.steps") {
            cfg.solver.steps = parse_u64(key, value);
        } else if (key == "solver.cfg_w") {
            cfg.cfg_w = parse_double(key, value);
        } else if (key == "eval.trials") {
            cfg.eval_trials = parse_u64(key, value);
        } else if (key == "eval.trial_frames") {
            cfg.eval_trial_frames = parse_u64(key, value);
        } else if (key == "eval.seeds") {
            cfg.eval_seeds = parse_u64(key, value);
        } else {
            throw ValueError("config: unknown key '" + key + "'");
        }
    }
    return cfg;
}

std::string config_echo(const RunConfig& cfg) {
    std::ostringstream os;
    os << "[run]\n";
    os << "seed = " << cfg.seed << "\n";
    os << "out = " << cfg.out << "\n";
    os << "[data]\n";
    os << "speakers = " << cfg.speakers << "\n";
    os << "clips_per_speaker = " << cfg.clips_per_speaker << "\n";
    os << "frames_per_clip = " << cfg.frames_per_clip << "\n";
    os << "identities = " << cfg.identities << "\n";
    os << "identity_frames = " << cfg.identity_frames << "\n";
    os << "[model]\n";
    os << "hidden = " << cfg.hidden << "\n";
    os << "layers = " << cfg.layers << "\n";
    os << "heads = " << cfg.heads << "\n";
    os << "head_dim = " << cfg.head_dim << "\n";
    os << "mlp_layers = " << cfg.mlp_layers << "\n";
    os << "max_frames = " << cfg.max_frames << "\n";
    os << "[sync]\n";
    os << "steps = " << cfg.sync_steps << "\n";
    os << "batch = " << cfg.sync_batch << "\n";
    os << "lr = " << CsvWriter::num(cfg.sync_lr) << "\n";
    os << "window = " << cfg.sync_window << "\n";
    os << "stride = " << cfg.sync_stride << "\n";
    os << "hidden = " << cfg.sync_hidden << "\n";
    os << "min_shift = " << cfg.sync_min_shift << "\n";
    os << "[train]\n";
    os << "steps = " << cfg.train_steps << "\n";
    os << "lr = " << CsvWriter::num(cfg.train_lr) << "\n";
    os << "lambda_sync = " << CsvWriter::num(cfg.lambda_sync) << "\n";
    os << "p_drop = " << CsvWriter::num(cfg.p_drop) << "\n";
    os << "prompt_frames = " << cfg.prompt_frames << "\n";
    os << "min_target = " << cfg.min_target << "\n";
    os << "max_target = " << cfg.max_target << "\n";
    os << "log_interval = " << cfg.log_interval << "\n";
    os << "[adapt]\n";
    os << "inversion = " << (cfg.adapt_inversion ? "true" : "false") << "\n";
    os << "lora = " << (cfg.adapt_lora ? "true" : "false") << "\n";
    os << "iters = " << cfg.adapt_iters << "\n";
    os << "lr = " << CsvWriter::num(cfg.adapt_lr) << "\n";
    os << "lora_rank = " << cfg.lora_rank << "\n";
    os << "lora_alpha = " << CsvWriter::num(cfg.lora_alpha) << "\n";
    os << "pretrain_steps = " << cfg.pretrain_steps << "\n";
    os << "pretrain_batch = " << cfg.pretrain_batch << "\n";
    os << "pretrain_hold_out = " << cfg.pretrain_hold_out << "\n";
    os << "enc_hidden = " << cfg.enc_hidden << "\n";
    os << "dec_hidden = " << cfg.dec_hidden << "\n";
    os << "[solver]\n";
    os << "method = " << flow::to_string(cfg.solver.method) << "\n";
    os << "steps = " << cfg.solver.steps << "\n";
    os << "cfg_w = " << CsvWriter::num(cfg.cfg_w) << "\n";
    os << "[eval]\n";
    os << "trials = " << cfg.eval_trials << "\n";
    os << "trial_frames = " << cfg.eval_trial_frames << "\n";
    os << "seeds = " << cfg.eval_seeds << "\n";
    return os.str();
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& columns)
    : path_(path), columns_(columns.size()) {
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (i) buffer_ += ',';
        buffer_ += columns[i];
    }
    buffer_ += '\n';
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_) throw ValueError("csv: wrong cell count");
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) buffer_ += ',';
        buffer_ += cells[i];
    }
    buffer_ += '\n';
}

std::string CsvWriter::num(double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

CsvWriter::~CsvWriter() {
    if (path_.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path_.parent_path(), ec);
    }
    std::ofstream out(path_, std::ios::trunc);
    out << buffer_;
}

}  // namespace mtlk::io
