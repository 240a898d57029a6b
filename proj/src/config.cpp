#include "osr/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "osr/errors.hpp"

namespace osr {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct Field {
    const char* name;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    bool trained = false;  // participates in the checkpoint fingerprint
};

template <class T>
T parse_num(const std::string& s) {
    std::istringstream is(s);
    T v;
    is >> v;
    if (is.fail() || !is.eof()) throw std::invalid_argument("bad numeric value '" + s + "'");
    return v;
}

const std::vector<Field>& fields() {
    auto str = [](std::string ExperimentConfig::*m) {
        return Field{nullptr, [m](const ExperimentConfig& c) { return c.*m; },
                     [m](ExperimentConfig& c, const std::string& v) { c.*m = v; }};
    };
    auto num = [](auto ExperimentConfig::*m) {
        using T = std::remove_reference_t<decltype(std::declval<ExperimentConfig>().*m)>;
        return Field{nullptr,
                     [m](const ExperimentConfig& c) {
                         if constexpr (std::is_floating_point_v<T>)
                             return fmt_double(c.*m);
                         else
                             return std::to_string(c.*m);
                     },
                     [m](ExperimentConfig& c, const std::string& v) { c.*m = parse_num<T>(v); }};
    };
    auto named = [](Field f, const char* name, bool trained = false) {
        f.name = name;
        f.trained = trained;
        return f;
    };
    static const std::vector<Field> table = {
        named(str(&ExperimentConfig::dataset), "dataset", true),
        named(str(&ExperimentConfig::data_root), "data_root"),
        named(str(&ExperimentConfig::unknown_dataset), "unknown_dataset"),
        named(num(&ExperimentConfig::num_known), "num_known", true),
        named(str(&ExperimentConfig::known_ids), "known_ids", true),
        named(str(&ExperimentConfig::backbone), "backbone", true),
        named(str(&ExperimentConfig::generator_arch), "generator_arch", true),
        named(str(&ExperimentConfig::discriminator_arch), "discriminator_arch", true),
        named(num(&ExperimentConfig::synthetic_unknowns), "synthetic_unknowns", true),
        named(num(&ExperimentConfig::noise_dim), "noise_dim", true),
        named(num(&ExperimentConfig::tau), "tau", true),
        named(num(&ExperimentConfig::alpha), "alpha", true),
        named(num(&ExperimentConfig::lambda_quantile), "lambda_quantile", true),
        named(num(&ExperimentConfig::eps_quantile), "eps_quantile"),
        named(num(&ExperimentConfig::batch_size), "batch_size", true),
        named(num(&ExperimentConfig::lr), "lr", true),
        named(num(&ExperimentConfig::adam_beta1), "adam_beta1", true),
        named(num(&ExperimentConfig::adam_beta2), "adam_beta2", true),
        named(num(&ExperimentConfig::eps_scale), "eps_scale", true),
        named(num(&ExperimentConfig::teacher_epochs), "teacher_epochs", true),
        named(num(&ExperimentConfig::steps), "steps", true),
        named(num(&ExperimentConfig::delta), "delta"),
        named(str(&ExperimentConfig::variant), "variant", true),
        named(str(&ExperimentConfig::out_dir), "out_dir"),
        named(num(&ExperimentConfig::seed), "seed", true),
        named(num(&ExperimentConfig::grid_every), "grid_every"),
    };
    return table;
}

std::string trim(std::string s) {
    s.erase(0, s.find_first_not_of(" \t"));
    auto e = s.find_last_not_of(" \t\r");
    s.erase(e == std::string::npos ? 0 : e + 1);
    return s;
}

}  // namespace

void ExperimentConfig::set_field(const std::string& key, const std::string& value) {
    for (const Field& f : fields()) {
        if (key == f.name) {
            try {
                f.set(*this, value);
            } catch (const std::exception& e) {
                throw std::invalid_argument("config field '" + key + "': " + e.what());
            }
            return;
        }
    }
    throw std::invalid_argument("unknown config key '" + key + "'");
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::vector<std::string> problems;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos) {
            problems.push_back("line " + std::to_string(lineno) + ": missing '='");
            continue;
        }
        try {
            cfg.set_field(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
        } catch (const std::exception& e) {
            problems.push_back(e.what());
        }
    }
    if (!problems.empty()) {
        std::string msg = "config errors:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw std::invalid_argument(msg);
    }
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw NotFoundError("config file not found: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return from_text(buf.str());
}

void ExperimentConfig::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw NotFoundError("cannot write config: " + path);
    os << echo();
}

std::string ExperimentConfig::echo() const {
    std::string out;
    for (const Field& f : fields()) {
        out += f.name;
        out += " = ";
        out += f.get(*this);
        out += "\n";
    }
    return out;
}

std::string ExperimentConfig::fingerprint() const {
    // Hash only the fields that shape the trained artifacts, so evaluation
    // options (unknown_dataset, delta, output paths) can change without
    // invalidating checkpoints.
    std::string text;
    for (const Field& f : fields())
        if (f.trained) {
            text += f.name;
            text += " = ";
            text += f.get(*this);
            text += "\n";
        }
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::vector<int> ExperimentConfig::known_id_list() const {
    std::vector<int> ids;
    std::istringstream is(known_ids);
    int v;
    while (is >> v) ids.push_back(v);
    if (!is.eof()) throw std::invalid_argument("known_ids: expected a space-separated integer list");
    return ids;
}

std::vector<std::string> ExperimentConfig::validate() const {
    std::vector<std::string> bad;
    auto check = [&](bool ok, const std::string& msg) {
        if (!ok) bad.push_back(msg);
    };
    check(!dataset.empty(), "dataset: must not be empty");
    check(num_known >= 1, "num_known: must be >= 1");
    try {
        known_id_list();
    } catch (const std::exception& e) {
        bad.emplace_back(e.what());
    }
    check(synthetic_unknowns >= 1, "synthetic_unknowns: must be >= 1");
    check(noise_dim >= 1, "noise_dim: must be >= 1");
    check(tau > 0.0, "tau: must be > 0");
    check(alpha >= 0.0, "alpha: must be >= 0");
    check(lambda_quantile > 0.0 && lambda_quantile < 1.0, "lambda_quantile: must be in (0,1)");
    check(eps_quantile > 0.0 && eps_quantile < 1.0, "eps_quantile: must be in (0,1)");
    check(batch_size >= 1, "batch_size: must be >= 1");
    check(lr > 0.0, "lr: must be > 0");
    check(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1: must be in [0,1)");
    check(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2: must be in [0,1)");
    check(eps_scale >= 0.0, "eps_scale: must be >= 0");
    check(teacher_epochs >= 1, "teacher_epochs: must be >= 1");
    check(steps >= 1, "steps: must be >= 1");
    check(delta >= 0.0 && delta <= 1.0, "delta: must be in [0,1]");
    check(variant == "T" || variant == "TS" || variant == "RS" || variant == "TRS",
          "variant: must be one of T, TS, RS, TRS");
    check(grid_every >= 0, "grid_every: must be >= 0");
    check(!out_dir.empty(), "out_dir: must not be empty");
    return bad;
}

void ExperimentConfig::require_valid() const {
    auto bad = validate();
    if (bad.empty()) return;
    std::string msg = "invalid config:";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw std::invalid_argument(msg);
}

}  // namespace osr
