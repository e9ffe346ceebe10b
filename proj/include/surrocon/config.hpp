#pragma once

// Flat `section.key = value` run configuration. Blank lines and lines starting
// with '#' are ignored; unknown keys are rejected.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "surrocon/contrastive.hpp"
#include "surrocon/dataforge.hpp"
#include "surrocon/errors.hpp"
#include "surrocon/format.hpp"
#include "surrocon/trainloop.hpp"

namespace surrocon {

/// Unknown key or unparsable value; `key` names the offending entry.
struct ConfigError : ParseError {
    ConfigError(std::string k, const std::string& msg) : ParseError(msg), key(std::move(k)) {}
    std::string key;
};

struct SplitConfig {
    double test_fraction = 20.0 / 96.0;
    std::uint64_t seed = 0;
};

struct EvalConfig {
    std::vector<std::size_t> slots{0, 1, 2, 3, 4};
    std::size_t n_per_class = 50;
    std::uint64_t seed = 0;
    std::size_t seeds = 1;
};

struct SweepConfig {
    std::vector<double> noise{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    std::size_t n = 100000;
    std::size_t k = 1;
    std::uint64_t seed = 0;
};

struct RunConfig {
    GeneratorConfig gen;
    ModelConfig model;
    TrainConfig train;
    ProbeConfig probe;
    SplitConfig split;
    EvalConfig eval;
    SweepConfig sweep;
    std::uint64_t gen_seed = 0;

    [[nodiscard]] std::string canonical() const;
    [[nodiscard]] std::string hash() const { return text_hash(canonical()); }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <typename T>
T parse_number(std::string_view v, const std::string& key) {
    T out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) {
        throw ConfigError(key, "config: bad value '" + std::string(v) + "' for " + key);
    }
    return out;
}

inline bool parse_bool(std::string_view v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key, "config: expected true/false for " + key);
}

template <typename T>
std::vector<T> parse_list(std::string_view v, const std::string& key) {
    std::vector<T> out;
    if (trim(v).empty()) return out;
    while (true) {
        auto comma = v.find(',');
        out.push_back(parse_number<T>(trim(v.substr(0, comma)), key));
        if (comma == std::string_view::npos) break;
        v.remove_prefix(comma + 1);
    }
    return out;
}

using Setter = std::function<void(RunConfig&, std::string_view, const std::string&)>;

inline const std::map<std::string, Setter>& setters() {
    using std::size_t;
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        auto num = [&t](const std::string& key, auto member_ptr) {
            t[key] = [member_ptr](RunConfig& c, std::string_view v, const std::string& k) {
                auto& field = member_ptr(c);
                field = parse_number<std::remove_reference_t<decltype(field)>>(v, k);
            };
        };
        num("gen.seed", [](RunConfig& c) -> std::uint64_t& { return c.gen_seed; });
        num("gen.num_classes", [](RunConfig& c) -> size_t& { return c.gen.num_classes; });
        num("gen.input_dim", [](RunConfig& c) -> size_t& { return c.gen.input_dim; });
        num("gen.n_eyes", [](RunConfig& c) -> size_t& { return c.gen.n_eyes; });
        num("gen.visits_per_eye", [](RunConfig& c) -> size_t& { return c.gen.visits_per_eye; });
        num("gen.class_persistence", [](RunConfig& c) -> double& { return c.gen.class_persistence; });
        num("gen.class_sep", [](RunConfig& c) -> double& { return c.gen.class_sep; });
        num("gen.feature_sd", [](RunConfig& c) -> double& { return c.gen.feature_sd; });
        num("gen.eye_sd", [](RunConfig& c) -> double& { return c.gen.eye_sd; });
        num("gen.biomarker_hi", [](RunConfig& c) -> double& { return c.gen.biomarker_hi; });
        num("gen.biomarker_lo", [](RunConfig& c) -> double& { return c.gen.biomarker_lo; });
        num("gen.rare_prob", [](RunConfig& c) -> double& { return c.gen.rare_prob; });
        num("gen.labeled_fraction", [](RunConfig& c) -> double& { return c.gen.labeled_fraction; });
        num("gen.clinical_sep", [](RunConfig& c) -> double& { return c.gen.clinical_sep; });
        num("gen.bcva_mean", [](RunConfig& c) -> double& { return c.gen.bcva_mean; });
        num("gen.bcva_sd", [](RunConfig& c) -> double& { return c.gen.bcva_sd; });
        num("gen.cst_mean", [](RunConfig& c) -> double& { return c.gen.cst_mean; });
        num("gen.cst_sd", [](RunConfig& c) -> double& { return c.gen.cst_sd; });
        t["gen.mirror_eyes"] = [](RunConfig& c, std::string_view v, const std::string& k) {
            c.gen.mirror_eyes = parse_bool(v, k);
        };
        t["gen.class_prior"] = [](RunConfig& c, std::string_view v, const std::string& k) {
            c.gen.class_prior = parse_list<double>(v, k);
        };

        t["model.hidden"] = [](RunConfig& c, std::string_view v, const std::string& k) {
            c.model.hidden = parse_list<size_t>(v, k);
        };
        num("model.repr_dim", [](RunConfig& c) -> size_t& { return c.model.repr_dim; });
        num("model.proj_hidden", [](RunConfig& c) -> size_t& { return c.model.proj_hidden; });
        num("model.proj_dim", [](RunConfig& c) -> size_t& { return c.model.proj_dim; });

        t["train.label_key"] = [](RunConfig& c, std::string_view v, const std::string& k) {
            try {
                c.train.label_key = LabelKey::parse(v, c.train.label_key.bin_width);
            } catch (const ParameterError& e) {
                throw ConfigError(k, e.what());
            }
        };
        num("train.bin_width", [](RunConfig& c) -> std::int64_t& { return c.train.label_key.bin_width; });
        num("train.temperature", [](RunConfig& c) -> double& { return c.train.temperature; });
        num("train.batch_size", [](RunConfig& c) -> size_t& { return c.train.batch_size; });
        num("train.epochs", [](RunConfig& c) -> size_t& { return c.train.epochs; });
        num("train.lr", [](RunConfig& c) -> double& { return c.train.lr; });
        num("train.momentum", [](RunConfig& c) -> double& { return c.train.momentum; });
        num("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });

        num("augment.sigma", [](RunConfig& c) -> double& { return c.train.augment.sigma; });
        num("augment.mask_p", [](RunConfig& c) -> double& { return c.train.augment.mask_p; });
        t["augment.flip"] = [](RunConfig& c, std::string_view v, const std::string& k) {
            c.train.augment.flip = parse_bool(v, k);
        };
        num("augment.crop_pad", [](RunConfig& c) -> size_t& { return c.train.augment.crop_pad; });
        num("augment.grid_width", [](RunConfig& c) -> size_t& { return c.train.augment.grid_width; });

        num("probe.batch_size", [](RunConfig& c) -> size_t& { return c.probe.batch_size; });
        num("probe.epochs", [](RunConfig& c) -> size_t& { return c.probe.epochs; });
        num("probe.lr", [](RunConfig& c) -> double& { return c.probe.lr; });
        num("probe.momentum", [](RunConfig& c) -> double& { return c.probe.momentum; });
        num("probe.seed", [](RunConfig& c) -> std::uint64_t& { return c.probe.seed; });
        num("probe.max_samples", [](RunConfig& c) -> size_t& { return c.probe.max_samples; });

        num("split.test_fraction", [](RunConfig& c) -> double& { return c.split.test_fraction; });
        num("split.seed", [](RunConfig& c) -> std::uint64_t& { return c.split.seed; });

        t["eval.slots"] = [](RunConfig& c, std::string_view v, const std::string& k) {
            c.eval.slots = parse_list<size_t>(v, k);
        };
        num("eval.n_per_class", [](RunConfig& c) -> size_t& { return c.eval.n_per_class; });
        num("eval.seed", [](RunConfig& c) -> std::uint64_t& { return c.eval.seed; });
        num("eval.seeds", [](RunConfig& c) -> size_t& { return c.eval.seeds; });

        t["sweep.noise"] = [](RunConfig& c, std::string_view v, const std::string& k) {
            c.sweep.noise = parse_list<double>(v, k);
        };
        num("sweep.n", [](RunConfig& c) -> size_t& { return c.sweep.n; });
        num("sweep.k", [](RunConfig& c) -> size_t& { return c.sweep.k; });
        num("sweep.seed", [](RunConfig& c) -> std::uint64_t& { return c.sweep.seed; });
        return t;
    }();
    return table;
}

}  // namespace detail

/// Apply `key = value` lines on top of `base`.
inline RunConfig parse_run_config(std::string_view text, RunConfig base = {}) {
    const auto& table = detail::setters();
    std::size_t lineno = 0;
    while (!text.empty()) {
        auto nl = text.find('\n');
        auto line = detail::trim(text.substr(0, nl));
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++lineno;
        if (line.empty() || line.front() == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("", "config line " + std::to_string(lineno) + ": expected 'section.key = value'");
        }
        const std::string key(detail::trim(line.substr(0, eq)));
        const auto value = detail::trim(line.substr(eq + 1));
        auto it = table.find(key);
        if (it == table.end()) throw ConfigError(key, "config line " + std::to_string(lineno) + ": unknown key " + key);
        it->second(base, value, key);
    }
    return base;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("", "cannot open config " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_run_config(ss.str());
}

inline std::string RunConfig::canonical() const {
    std::ostringstream os;
    os << "gen.seed = " << gen_seed << '\n'
       << gen.canonical() << surrocon::canonical(model) << surrocon::canonical(train) << surrocon::canonical(probe)
       << "split.test_fraction = " << format_double(split.test_fraction) << "\nsplit.seed = " << split.seed
       << "\neval.slots = ";
    for (std::size_t i = 0; i < eval.slots.size(); ++i) os << (i ? "," : "") << eval.slots[i];
    os << "\neval.n_per_class = " << eval.n_per_class << "\neval.seed = " << eval.seed << "\neval.seeds = " << eval.seeds
       << "\nsweep.noise = ";
    for (std::size_t i = 0; i < sweep.noise.size(); ++i) os << (i ? "," : "") << format_double(sweep.noise[i]);
    os << "\nsweep.n = " << sweep.n << "\nsweep.k = " << sweep.k << "\nsweep.seed = " << sweep.seed << '\n';
    return os.str();
}

}  // namespace surrocon
