#include "detpro/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "detpro/errors.hpp"
#include "detpro/sha256.hpp"

namespace detpro::trainer {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw config_error("config: bad real for " + key + ": '" + v + "'");
    }
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        long long n = std::stoll(v, &used);
        if (used != v.size() || n < 0) throw std::invalid_argument(v);
        return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
        throw config_error("config: bad integer for " + key + ": '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        unsigned long long n = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return static_cast<std::uint64_t>(n);
    } catch (const std::exception&) {
        throw config_error("config: bad seed for " + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw config_error("config: bad bool for " + key + ": '" + v + "'");
}

void set_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "context_length") cfg.context_length = parse_size(key, value);
    else if (key == "word_dim") cfg.word_dim = parse_size(key, value);
    else if (key == "embed_dim") cfg.embed_dim = parse_size(key, value);
    else if (key == "max_len") cfg.max_len = parse_size(key, value);
    else if (key == "init_std") cfg.init_std = parse_double(key, value);
    else if (key == "lr") cfg.lr = parse_double(key, value);
    else if (key == "epochs") cfg.epochs = parse_size(key, value);
    else if (key == "batch_size") cfg.batch_size = parse_size(key, value);
    else if (key == "temperature") cfg.temperature = parse_double(key, value);
    else if (key == "bg_mode") cfg.bg_mode = losses::bg_mode_from(value);
    else if (key == "neg_fraction") cfg.neg_fraction = parse_double(key, value);
    else if (key == "token_position") cfg.token_position = prompt::token_position_from(value);
    else if (key == "iou_threshold") cfg.iou_threshold = parse_double(key, value);
    else if (key == "iou_low") cfg.iou_low = parse_double(key, value);
    else if (key == "iou_high") cfg.iou_high = parse_double(key, value);
    else if (key == "iou_step") cfg.iou_step = parse_double(key, value);
    else if (key == "gt_in_all_groups") cfg.gt_in_all_groups = parse_bool(key, value);
    else if (key == "use_gt") cfg.use_gt = parse_bool(key, value);
    else if (key == "use_fg") cfg.use_fg = parse_bool(key, value);
    else if (key == "use_bg") cfg.use_bg = parse_bool(key, value);
    else if (key == "ensemble_level") {
        if (value == "context") cfg.ensemble_level = TrainConfig::EnsembleLevel::context;
        else if (value == "embedding") cfg.ensemble_level = TrainConfig::EnsembleLevel::embedding;
        else throw config_error("config: unknown ensemble_level '" + value + "'");
    }
    else if (key == "seed_init") cfg.seed_init = parse_u64(key, value);
    else if (key == "seed_data") cfg.seed_data = parse_u64(key, value);
    else if (key == "seed_encoder") cfg.seed_encoder = parse_u64(key, value);
    else throw config_error("config: unknown key '" + key + "'");
}

} // namespace

std::size_t TrainConfig::group_count() const {
    double ratio = (iou_high - iou_low) / iou_step;
    long k = std::lround(ratio);
    if (k < 1 || std::fabs(ratio - static_cast<double>(k)) > 1e-9)
        throw config_error("config: iou_step does not divide [iou_low, iou_high]");
    return static_cast<std::size_t>(k);
}

void TrainConfig::validate() const {
    if (context_length < 1) throw config_error("config: context_length must be >= 1");
    if (word_dim < 1 || embed_dim < 1) throw config_error("config: dims must be >= 1");
    if (max_len < context_length + 1)
        throw config_error("config: max_len must be at least context_length + 1");
    if (!(init_std > 0.0)) throw config_error("config: init_std must be positive");
    if (!(lr > 0.0)) throw config_error("config: lr must be positive");
    if (batch_size < 1) throw config_error("config: batch_size must be >= 1");
    if (!(temperature > 0.0)) throw config_error("config: temperature must be positive");
    if (!(neg_fraction > 0.0 && neg_fraction <= 1.0))
        throw config_error("config: neg_fraction must lie in (0,1]");
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
        throw config_error("config: iou_threshold must lie in (0,1)");
    if (!(iou_low < iou_high)) throw config_error("config: iou_low must be below iou_high");
    if (!(iou_step > 0.0)) throw config_error("config: iou_step must be positive");
    group_count(); // divisibility
}

TrainConfig parse_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw config_error("config: line " + std::to_string(line_no) + " is not key=value");
        set_key(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

TrainConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw config_error("cannot open config: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

void apply_override(TrainConfig& cfg, const std::string& key_value) {
    std::size_t eq = key_value.find('=');
    if (eq == std::string::npos)
        throw config_error("override is not key=value: '" + key_value + "'");
    set_key(cfg, trim(key_value.substr(0, eq)), trim(key_value.substr(eq + 1)));
}

std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string canonical_config_text(const TrainConfig& cfg) {
    // Keys in sorted order, values re-serialized from the parsed struct so the
    // digest reflects the semantic configuration rather than the source text.
    std::ostringstream os;
    os << "batch_size=" << cfg.batch_size << '\n';
    os << "bg_mode=" << losses::to_string(cfg.bg_mode) << '\n';
    os << "context_length=" << cfg.context_length << '\n';
    os << "embed_dim=" << cfg.embed_dim << '\n';
    os << "ensemble_level="
       << (cfg.ensemble_level == TrainConfig::EnsembleLevel::context ? "context" : "embedding")
       << '\n';
    os << "epochs=" << cfg.epochs << '\n';
    os << "gt_in_all_groups=" << (cfg.gt_in_all_groups ? "true" : "false") << '\n';
    os << "init_std=" << format_double(cfg.init_std) << '\n';
    os << "iou_high=" << format_double(cfg.iou_high) << '\n';
    os << "iou_low=" << format_double(cfg.iou_low) << '\n';
    os << "iou_step=" << format_double(cfg.iou_step) << '\n';
    os << "iou_threshold=" << format_double(cfg.iou_threshold) << '\n';
    os << "lr=" << format_double(cfg.lr) << '\n';
    os << "max_len=" << cfg.max_len << '\n';
    os << "neg_fraction=" << format_double(cfg.neg_fraction) << '\n';
    os << "seed_data=" << cfg.seed_data << '\n';
    os << "seed_encoder=" << cfg.seed_encoder << '\n';
    os << "seed_init=" << cfg.seed_init << '\n';
    os << "temperature=" << format_double(cfg.temperature) << '\n';
    os << "token_position=" << prompt::to_string(cfg.token_position) << '\n';
    os << "use_bg=" << (cfg.use_bg ? "true" : "false") << '\n';
    os << "use_fg=" << (cfg.use_fg ? "true" : "false") << '\n';
    os << "use_gt=" << (cfg.use_gt ? "true" : "false") << '\n';
    os << "word_dim=" << cfg.word_dim << '\n';
    return os.str();
}

std::array<std::uint8_t, 32> config_hash(const TrainConfig& cfg) {
    return sha256(canonical_config_text(cfg));
}

} // namespace detpro::trainer
