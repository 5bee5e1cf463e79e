#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mostdsa/common.hpp"

namespace mostdsa {

// Uniform interpolation instants for k intermediate frames: i/(k+1).
inline std::vector<double> uniform_schedule(int k) {
    if (k < 1) throw UsageError("schedule needs at least one frame");
    std::vector<double> ts;
    for (int i = 1; i <= k; ++i) ts.push_back(double(i) / double(k + 1));
    return ts;
}

// Ordered interpolation times, each strictly inside (0,1), no duplicates.
class TimeSchedule {
public:
    TimeSchedule() = default;
    explicit TimeSchedule(std::vector<double> ts) : ts_(std::move(ts)) {
        if (ts_.empty()) throw UsageError("time schedule is empty");
        double prev = 0.0;
        for (double t : ts_) {
            if (!(t > 0.0 && t < 1.0))
                throw UsageError("time " + std::to_string(t) + " outside (0,1)");
            if (t <= prev)
                throw UsageError("time schedule must be strictly increasing (duplicate or "
                                 "out-of-order value " +
                                 std::to_string(t) + ")");
            prev = t;
        }
    }

    static TimeSchedule uniform(int k) { return TimeSchedule(uniform_schedule(k)); }

    const std::vector<double>& times() const { return ts_; }
    std::size_t size() const { return ts_.size(); }
    bool empty() const { return ts_.empty(); }
    double operator[](std::size_t i) const { return ts_[i]; }

private:
    std::vector<double> ts_;
};

// Full run configuration: architecture, schedule, and training
// hyperparameters. Serialized 1:1 into checkpoints.
struct Config {
    // architecture
    int r = 0;  // context scope; 0 = pick by n_interp (29, 29, 21)
    int c0 = 16, c1 = 32, c2 = 64;
    int token_dim = 64;
    int heads = 2;
    int pos_basis = 32;
    int fme_width = 64;
    int ref_w0 = 32, ref_w1 = 64, ref_w2 = 128;
    int perceptual_seed = 424242;

    // interpolation task
    int n_interp = 1;
    std::vector<double> schedule;  // empty = uniform from n_interp

    // optimization
    double lr_peak = 2e-4;
    double lr_floor = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 1e-4;
    int warmup_steps = 200;
    int epochs = 30;
    int batch_size = 4;
    int crop = 48;
    std::uint64_t seed = 1;

    int effective_r() const {
        if (r > 0) return r;
        return n_interp >= 3 ? 21 : 29;
    }

    TimeSchedule effective_schedule() const {
        if (!schedule.empty()) return TimeSchedule(schedule);
        return TimeSchedule::uniform(n_interp);
    }

    void validate() const;
    std::string serialize() const;
    static Config parse(const std::string& text);
    static Config load_file(const std::string& path);
};

inline void Config::validate() const {
    if (r != 0 && (r < 1 || r % 2 == 0))
        throw ConfigError("r = " + std::to_string(r) +
                          " invalid: the context scope must be odd so the neighborhood is "
                          "centered on each query position");
    if (c0 < 1 || c1 < 1 || c2 < 1) throw ConfigError("channel ladder entries must be positive");
    if (token_dim < 1 || token_dim % heads != 0)
        throw ConfigError("token_dim must be positive and divisible by heads");
    if (pos_basis < 4 || pos_basis % 4 != 0)
        throw ConfigError("pos_basis must be a positive multiple of 4");
    if (n_interp < 1 || n_interp > 16) throw ConfigError("n_interp must be in [1, 16]");
    if (!schedule.empty()) TimeSchedule dummy(schedule);
    if (lr_peak <= 0 || lr_floor <= 0 || lr_floor > lr_peak)
        throw ConfigError("learning rates must satisfy 0 < lr_floor <= lr_peak");
    if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
        throw ConfigError("optimizer betas must lie in (0,1)");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (crop < 8 || crop % 4 != 0)
        throw ConfigError("crop must be a multiple of 4 and at least 8");
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        std::size_t pos = 0;
        double v = std::stod(item, &pos);
        if (pos != item.size()) throw ConfigError("malformed number '" + item + "'");
        out.push_back(v);
    }
    return out;
}

}  // namespace detail

inline std::string Config::serialize() const {
    std::ostringstream os;
    os << "r = " << r << "\n";
    os << "channels = " << c0 << "," << c1 << "," << c2 << "\n";
    os << "token_dim = " << token_dim << "\n";
    os << "heads = " << heads << "\n";
    os << "pos_basis = " << pos_basis << "\n";
    os << "fme_width = " << fme_width << "\n";
    os << "refiner_widths = " << ref_w0 << "," << ref_w1 << "," << ref_w2 << "\n";
    os << "perceptual_seed = " << perceptual_seed << "\n";
    os << "n_interp = " << n_interp << "\n";
    os << "schedule = ";
    for (std::size_t i = 0; i < schedule.size(); ++i) os << (i ? "," : "") << schedule[i];
    os << "\n";
    os << "lr_peak = " << lr_peak << "\n";
    os << "lr_floor = " << lr_floor << "\n";
    os << "beta1 = " << beta1 << "\n";
    os << "beta2 = " << beta2 << "\n";
    os << "weight_decay = " << weight_decay << "\n";
    os << "warmup_steps = " << warmup_steps << "\n";
    os << "epochs = " << epochs << "\n";
    os << "batch_size = " << batch_size << "\n";
    os << "crop = " << crop << "\n";
    os << "seed = " << seed << "\n";
    return os.str();
}

inline Config Config::parse(const std::string& text) {
    Config cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));

        auto as_int = [&]() { return std::stoi(val); };
        auto as_double = [&]() { return std::stod(val); };

        if (key == "r") cfg.r = as_int();
        else if (key == "channels") {
            auto v = detail::parse_double_list(val);
            if (v.size() != 3) throw ConfigError("channels expects 3 comma-separated values");
            cfg.c0 = int(v[0]); cfg.c1 = int(v[1]); cfg.c2 = int(v[2]);
        }
        else if (key == "token_dim") cfg.token_dim = as_int();
        else if (key == "heads") cfg.heads = as_int();
        else if (key == "pos_basis") cfg.pos_basis = as_int();
        else if (key == "fme_width") cfg.fme_width = as_int();
        else if (key == "refiner_widths") {
            auto v = detail::parse_double_list(val);
            if (v.size() != 3) throw ConfigError("refiner_widths expects 3 values");
            cfg.ref_w0 = int(v[0]); cfg.ref_w1 = int(v[1]); cfg.ref_w2 = int(v[2]);
        }
        else if (key == "perceptual_seed") cfg.perceptual_seed = as_int();
        else if (key == "n_interp") cfg.n_interp = as_int();
        else if (key == "schedule") cfg.schedule = detail::parse_double_list(val);
        else if (key == "lr_peak") cfg.lr_peak = as_double();
        else if (key == "lr_floor") cfg.lr_floor = as_double();
        else if (key == "beta1") cfg.beta1 = as_double();
        else if (key == "beta2") cfg.beta2 = as_double();
        else if (key == "weight_decay") cfg.weight_decay = as_double();
        else if (key == "warmup_steps") cfg.warmup_steps = as_int();
        else if (key == "epochs") cfg.epochs = as_int();
        else if (key == "batch_size") cfg.batch_size = as_int();
        else if (key == "crop") cfg.crop = as_int();
        else if (key == "seed") cfg.seed = std::stoull(val);
        else throw ConfigError("unknown config key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

inline Config Config::load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw RuntimeFailure("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

}  // namespace mostdsa
