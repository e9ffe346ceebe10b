#pragma once

// Samples, the synthetic generator, manifest I/O, eye-level splitting and
// balanced per-biomarker test sets.
//
// Generated data follows a latent severity class per visit. Each eye starts in
// a class drawn from the prior and at every later visit keeps its class with
// probability `class_persistence`, otherwise redraws from the prior, so the
// per-visit marginal is exactly the prior. Features, biomarkers and clinical
// values are conditionally independent given the class. The clinical dial
// `clinical_sep` shifts class-conditional BCVA/CST means by that many
// within-class standard deviations per class step; at 0 the clinical values
// carry no class information.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "surrocon/errors.hpp"
#include "surrocon/rng.hpp"
#include "surrocon/tensor.hpp"

namespace surrocon {

inline constexpr std::size_t kBiomarkerSlots = 16;

/// Slots that are well enough populated to train a detector on.
inline constexpr std::array<std::size_t, 5> kPrimarySlots{0, 1, 2, 3, 4};

enum class Marker : std::int8_t { Unknown = -1, Absent = 0, Present = 1 };

struct Sample {
    std::int64_t sample_id = 0;
    std::int64_t eye_id = 0;
    std::int64_t bcva = 0;
    std::int64_t cst = 0;
    std::array<Marker, kBiomarkerSlots> biomarkers{};
    std::vector<double> features;
    /// Latent severity class; -1 when unknown (e.g. loaded from a manifest). Not serialized.
    int severity = -1;

    [[nodiscard]] bool labeled(std::size_t slot) const { return biomarkers.at(slot) != Marker::Unknown; }

    /// Equality over the observable (serialized) fields.
    friend bool operator==(const Sample& a, const Sample& b) {
        return a.sample_id == b.sample_id && a.eye_id == b.eye_id && a.bcva == b.bcva && a.cst == b.cst &&
               a.biomarkers == b.biomarkers && a.features == b.features;
    }
};

enum class Split : std::uint8_t { Unassigned, Train, Test };

struct Dataset {
    std::size_t input_dim = 0;
    std::vector<Sample> samples;
    std::vector<Split> split;  // empty until split_by_eye
    std::string provenance;

    [[nodiscard]] bool is_split() const { return split.size() == samples.size() && !samples.empty(); }

    [[nodiscard]] std::vector<std::size_t> indices(Split s) const {
        if (!is_split()) throw ContractError("dataset has no train/test assignment");
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (split[i] == s) out.push_back(i);
        }
        return out;
    }

    /// Train-side samples: the contrastive pretraining pool.
    [[nodiscard]] std::vector<std::size_t> pretrain_indices() const { return indices(Split::Train); }

    /// Train-side samples with every slot in `slots` known: the probe-training pool.
    [[nodiscard]] std::vector<std::size_t> probe_indices(std::span<const std::size_t> slots) const {
        std::vector<std::size_t> out;
        for (auto i : indices(Split::Train)) {
            bool ok = !slots.empty();
            for (auto j : slots) ok = ok && samples[i].labeled(j);
            if (ok) out.push_back(i);
        }
        return out;
    }

    [[nodiscard]] Tensor features(std::span<const std::size_t> idx) const {
        std::vector<double> out;
        out.reserve(idx.size() * input_dim);
        for (auto i : idx) out.insert(out.end(), samples[i].features.begin(), samples[i].features.end());
        return Tensor::matrix(idx.size(), input_dim, std::move(out));
    }

    friend bool operator==(const Dataset& a, const Dataset& b) {
        return a.input_dim == b.input_dim && a.samples == b.samples;
    }
};

inline std::uint64_t dataset_hash(const Dataset& ds) {
    Fnv1a h;
    const auto d = static_cast<std::uint64_t>(ds.input_dim);
    h.update(&d, sizeof d);
    for (const auto& s : ds.samples) {
        const std::int64_t head[4] = {s.sample_id, s.eye_id, s.bcva, s.cst};
        h.update(head, sizeof head);
        h.update(s.biomarkers.data(), s.biomarkers.size());
        h.update(std::span<const double>(s.features));
    }
    return h.digest();
}

// ---------------------------------------------------------------------------
// Generator

struct GeneratorConfig {
    std::size_t num_classes = 4;
    std::vector<double> class_prior;  // empty means uniform
    std::size_t input_dim = 32;
    std::size_t n_eyes = 96;
    std::size_t visits_per_eye = 32;
    double class_persistence = 0.8;

    // features: x = ±class_mean[c] + eye_offset[eye] + N(0, feature_sd²) per coordinate,
    // with the sign flipped for odd (mirrored, left-eye) eye ids when mirror_eyes is set
    double class_sep = 4.0;   // norm of each class mean
    bool mirror_eyes = true;
    double feature_sd = 1.0;
    double eye_sd = 1.0;

    double biomarker_hi = 0.85;
    double biomarker_lo = 0.15;
    double rare_prob = 0.05;
    double labeled_fraction = 0.5;

    // clinical values: mean shifts by clinical_sep·sd per class step around the centre
    double clinical_sep = 3.0;
    double bcva_mean = 70.0;
    double bcva_sd = 3.0;
    double cst_mean = 300.0;
    double cst_sd = 4.0;

    [[nodiscard]] std::vector<double> prior() const {
        if (class_prior.empty()) return std::vector<double>(num_classes, 1.0 / static_cast<double>(num_classes));
        return class_prior;
    }

    /// Probability that slot `slot` is present for class `c`. Primary slot j is
    /// "high" above a severity threshold 1 + j mod (K-1); odd slots are reversed
    /// (present in milder classes). Rare slots ignore the class.
    [[nodiscard]] double biomarker_prob(std::size_t slot, std::size_t c) const {
        if (slot >= kPrimarySlots.size()) return rare_prob;
        if (num_classes < 2) return 0.5 * (biomarker_hi + biomarker_lo);
        const std::size_t threshold = 1 + slot % (num_classes - 1);
        const bool high = (c >= threshold) != (slot % 2 == 1);
        return high ? biomarker_hi : biomarker_lo;
    }

    /// Throws ParameterError naming the first invalid field.
    void validate() const {
        auto prob = [](double p, const char* name) {
            if (!(p >= 0.0 && p <= 1.0)) throw ParameterError(std::string("gen.") + name + " must lie in [0,1]");
        };
        if (num_classes < 1) throw ParameterError("gen.num_classes must be >= 1");
        if (input_dim < 1) throw ParameterError("gen.input_dim must be >= 1");
        if (n_eyes < 1 || visits_per_eye < 1) throw ParameterError("gen.n_eyes and gen.visits_per_eye must be >= 1");
        prob(class_persistence, "class_persistence");
        prob(biomarker_hi, "biomarker_hi");
        prob(biomarker_lo, "biomarker_lo");
        prob(rare_prob, "rare_prob");
        prob(labeled_fraction, "labeled_fraction");
        if (!(clinical_sep >= 0.0)) throw ParameterError("gen.clinical_sep must be >= 0");
        if (!(feature_sd > 0.0)) throw ParameterError("gen.feature_sd must be > 0");
        if (!(eye_sd >= 0.0) || !(class_sep >= 0.0)) throw ParameterError("gen.eye_sd and gen.class_sep must be >= 0");
        if (!(bcva_sd > 0.0) || !(cst_sd > 0.0)) throw ParameterError("gen.bcva_sd and gen.cst_sd must be > 0");
        if (!class_prior.empty()) {
            if (class_prior.size() != num_classes) throw ParameterError("gen.class_prior must have num_classes entries");
            double s = 0.0;
            for (double p : class_prior) {
                prob(p, "class_prior");
                s += p;
            }
            if (std::abs(s - 1.0) > 1e-9) throw ParameterError("gen.class_prior must sum to 1");
        }
    }

    /// Canonical `key = value` listing; its hash identifies the configuration.
    [[nodiscard]] std::string canonical() const {
        std::ostringstream os;
        os.precision(17);
        os << "gen.num_classes = " << num_classes << '\n' << "gen.class_prior = ";
        for (std::size_t i = 0; i < class_prior.size(); ++i) os << (i ? "," : "") << class_prior[i];
        os << '\n'
           << "gen.input_dim = " << input_dim << '\n'
           << "gen.n_eyes = " << n_eyes << '\n'
           << "gen.visits_per_eye = " << visits_per_eye << '\n'
           << "gen.class_persistence = " << class_persistence << '\n'
           << "gen.class_sep = " << class_sep << '\n'
           << "gen.mirror_eyes = " << (mirror_eyes ? "true" : "false") << '\n'
           << "gen.feature_sd = " << feature_sd << '\n'
           << "gen.eye_sd = " << eye_sd << '\n'
           << "gen.biomarker_hi = " << biomarker_hi << '\n'
           << "gen.biomarker_lo = " << biomarker_lo << '\n'
           << "gen.rare_prob = " << rare_prob << '\n'
           << "gen.labeled_fraction = " << labeled_fraction << '\n'
           << "gen.clinical_sep = " << clinical_sep << '\n'
           << "gen.bcva_mean = " << bcva_mean << '\n'
           << "gen.bcva_sd = " << bcva_sd << '\n'
           << "gen.cst_mean = " << cst_mean << '\n'
           << "gen.cst_sd = " << cst_sd << '\n';
        return os.str();
    }

    [[nodiscard]] std::string hash() const {
        Fnv1a h;
        h.update(canonical());
        return hex64(h.digest());
    }
};

namespace detail {

inline std::int64_t discretize(double v, std::int64_t lo, std::int64_t hi) {
    return std::clamp(static_cast<std::int64_t>(std::llround(v)), lo, hi);
}

}  // namespace detail

/// Class means used by the generator; a function of (cfg, seed) only.
inline std::vector<std::vector<double>> class_means(const GeneratorConfig& cfg, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0xC1A55));
    std::vector<std::vector<double>> means(cfg.num_classes, std::vector<double>(cfg.input_dim));
    for (auto& m : means) {
        double n2 = 0.0;
        for (auto& v : m) {
            v = rng.normal();
            n2 += v * v;
        }
        const double s = cfg.class_sep / std::sqrt(n2);
        for (auto& v : m) v *= s;
    }
    return means;
}

inline Dataset generate(const GeneratorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto prior = cfg.prior();
    const auto means = class_means(cfg, seed);
    const double centre = (static_cast<double>(cfg.num_classes) - 1.0) / 2.0;

    Dataset ds;
    ds.input_dim = cfg.input_dim;
    ds.provenance = "generator:" + cfg.hash() + ":seed=" + std::to_string(seed);
    ds.samples.reserve(cfg.n_eyes * cfg.visits_per_eye);

    std::int64_t next_id = 0;
    for (std::size_t eye = 0; eye < cfg.n_eyes; ++eye) {
        Rng rng(derive_seed(seed, 1, eye));
        std::vector<double> eye_offset(cfg.input_dim);
        for (auto& v : eye_offset) v = rng.normal(0.0, cfg.eye_sd);
        const double laterality = cfg.mirror_eyes && eye % 2 == 1 ? -1.0 : 1.0;
        auto c = rng.categorical(prior);
        for (std::size_t visit = 0; visit < cfg.visits_per_eye; ++visit) {
            if (visit > 0 && !rng.bernoulli(cfg.class_persistence)) c = rng.categorical(prior);
            Sample s;
            s.sample_id = next_id++;
            s.eye_id = static_cast<std::int64_t>(eye);
            s.severity = static_cast<int>(c);
            const double step = static_cast<double>(c) - centre;
            // Higher severity: thicker retina, worse acuity.
            s.bcva = detail::discretize(rng.normal(cfg.bcva_mean - cfg.clinical_sep * cfg.bcva_sd * step, cfg.bcva_sd),
                                        0, 100);
            s.cst = detail::discretize(rng.normal(cfg.cst_mean + cfg.clinical_sep * cfg.cst_sd * step, cfg.cst_sd),
                                       150, 600);
            const bool labeled = rng.bernoulli(cfg.labeled_fraction);
            for (std::size_t j = 0; j < kBiomarkerSlots; ++j) {
                const bool present = rng.bernoulli(cfg.biomarker_prob(j, c));
                s.biomarkers[j] = !labeled ? Marker::Unknown : (present ? Marker::Present : Marker::Absent);
            }
            s.features.resize(cfg.input_dim);
            for (std::size_t k = 0; k < cfg.input_dim; ++k) {
                s.features[k] = laterality * means[c][k] + eye_offset[k] + rng.normal(0.0, cfg.feature_sd);
            }
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Manifest: header line, CSV column line, one row per sample; features live
// in a sidecar of raw little-endian float64 at the row's byte offset.

inline constexpr std::string_view kManifestMagic = "surrocon-manifest v1 input_dim=";

inline std::string manifest_columns() {
    std::string s = "sample_id,eye_id,bcva,cst";
    for (std::size_t j = 0; j < kBiomarkerSlots; ++j) s += ",b" + std::to_string(j);
    return s + ",offset";
}

/// Sidecar path for a manifest: same stem, `.f64` extension.
inline std::filesystem::path sidecar_path(const std::filesystem::path& manifest) {
    auto p = manifest;
    p.replace_extension(".f64");
    return p;
}

inline void save_manifest(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream csv(path, std::ios::binary | std::ios::trunc);
    std::ofstream blob(sidecar_path(path), std::ios::binary | std::ios::trunc);
    if (!csv || !blob) throw ContractError("cannot write manifest at " + path.string());
    csv << kManifestMagic << ds.input_dim << '\n' << manifest_columns() << '\n';
    std::uint64_t offset = 0;
    for (const auto& s : ds.samples) {
        if (s.features.size() != ds.input_dim) {
            throw IntegrityError("sample " + std::to_string(s.sample_id) + " has wrong feature length");
        }
        csv << s.sample_id << ',' << s.eye_id << ',' << s.bcva << ',' << s.cst;
        for (auto m : s.biomarkers) csv << ',' << static_cast<int>(m);
        csv << ',' << offset << '\n';
        blob.write(reinterpret_cast<const char*>(s.features.data()),
                   static_cast<std::streamsize>(s.features.size() * sizeof(double)));
        offset += s.features.size() * sizeof(double);
    }
    if (!csv || !blob) throw ContractError("failed writing manifest at " + path.string());
}

namespace detail {

template <typename T>
T parse_int_field(std::string_view f, std::size_t line, const char* name) {
    T v{};
    auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (ec != std::errc{} || ptr != f.data() + f.size()) {
        throw ParseError("manifest line " + std::to_string(line) + ": bad " + name + " '" + std::string(f) + "'");
    }
    return v;
}

}  // namespace detail

inline Dataset load_manifest(const std::filesystem::path& path) {
    std::ifstream csv(path, std::ios::binary);
    if (!csv) throw ContractError("cannot open manifest " + path.string());
    const auto side = sidecar_path(path);
    std::ifstream blob(side, std::ios::binary);
    if (!blob) throw ContractError("cannot open feature sidecar " + side.string());
    blob.seekg(0, std::ios::end);
    const auto blob_size = static_cast<std::uint64_t>(blob.tellg());

    Dataset ds;
    ds.provenance = "manifest:" + path.string();
    std::string line;
    if (!std::getline(csv, line) || !line.starts_with(kManifestMagic)) {
        throw ParseError("manifest line 1: expected '" + std::string(kManifestMagic) + "<d>'");
    }
    ds.input_dim = detail::parse_int_field<std::size_t>(std::string_view(line).substr(kManifestMagic.size()), 1,
                                                         "input_dim");
    if (ds.input_dim == 0) throw ParseError("manifest line 1: input_dim must be positive");
    if (!std::getline(csv, line) || line != manifest_columns()) {
        throw ParseError("manifest line 2: unexpected column header");
    }

    const std::size_t n_fields = 4 + kBiomarkerSlots + 1;
    const std::uint64_t row_bytes = ds.input_dim * sizeof(double);
    std::size_t lineno = 2;
    std::vector<std::string_view> fields;
    while (std::getline(csv, line)) {
        ++lineno;
        if (line.empty()) continue;
        fields.clear();
        std::string_view rest(line);
        while (true) {
            auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() != n_fields) {
            throw ParseError("manifest line " + std::to_string(lineno) + ": expected " + std::to_string(n_fields) +
                             " fields, got " + std::to_string(fields.size()));
        }
        Sample s;
        s.sample_id = detail::parse_int_field<std::int64_t>(fields[0], lineno, "sample_id");
        s.eye_id = detail::parse_int_field<std::int64_t>(fields[1], lineno, "eye_id");
        s.bcva = detail::parse_int_field<std::int64_t>(fields[2], lineno, "bcva");
        s.cst = detail::parse_int_field<std::int64_t>(fields[3], lineno, "cst");
        for (std::size_t j = 0; j < kBiomarkerSlots; ++j) {
            auto v = detail::parse_int_field<int>(fields[4 + j], lineno, "biomarker");
            if (v < -1 || v > 1) {
                throw ParseError("manifest line " + std::to_string(lineno) + ": biomarker must be -1, 0 or 1");
            }
            s.biomarkers[j] = static_cast<Marker>(v);
        }
        const auto offset = detail::parse_int_field<std::uint64_t>(fields[n_fields - 1], lineno, "offset");
        if (offset > blob_size || blob_size - offset < row_bytes) {
            throw IntegrityError("sample " + std::to_string(s.sample_id) + ": feature blob at offset " +
                                 std::to_string(offset) + " exceeds sidecar size " + std::to_string(blob_size));
        }
        s.features.resize(ds.input_dim);
        blob.seekg(static_cast<std::streamoff>(offset));
        blob.read(reinterpret_cast<char*>(s.features.data()), static_cast<std::streamsize>(row_bytes));
        if (!blob) throw IntegrityError("sample " + std::to_string(s.sample_id) + ": short read from sidecar");
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Splits

/// Assign whole eyes to train or test. round(test_fraction·eyes) eyes go to test,
/// clamped so both sides keep at least one eye.
inline Dataset split_by_eye(Dataset ds, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ParameterError("split: test_fraction must be in (0,1)");
    std::set<std::int64_t> eye_set;
    for (const auto& s : ds.samples) eye_set.insert(s.eye_id);
    if (eye_set.size() < 2) throw ContractError("split: need at least 2 eyes, have " + std::to_string(eye_set.size()));
    std::vector<std::int64_t> eyes(eye_set.begin(), eye_set.end());
    Rng rng(derive_seed(seed, 0x5E1));
    rng.shuffle(eyes);
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(eyes.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, eyes.size() - 1);
    const std::set<std::int64_t> test_eyes(eyes.begin(), eyes.begin() + static_cast<std::ptrdiff_t>(n_test));
    ds.split.assign(ds.samples.size(), Split::Train);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        if (test_eyes.contains(ds.samples[i].eye_id)) ds.split[i] = Split::Test;
    }
    return ds;
}

/// Test-side sample indices: n_per_class with slot present, then n_per_class absent,
/// each drawn without replacement. Unknown markers are never drawn.
inline std::vector<std::size_t> balanced_test_set(const Dataset& ds, std::size_t slot, std::size_t n_per_class,
                                                  std::uint64_t seed) {
    if (slot >= kBiomarkerSlots) throw ParameterError("balanced_test_set: slot out of range");
    std::vector<std::size_t> present, absent;
    for (auto i : ds.indices(Split::Test)) {
        const auto m = ds.samples[i].biomarkers[slot];
        if (m == Marker::Present) present.push_back(i);
        if (m == Marker::Absent) absent.push_back(i);
    }
    if (present.size() < n_per_class || absent.size() < n_per_class) {
        throw ShortageError("balanced_test_set: slot " + std::to_string(slot) + " needs " +
                            std::to_string(n_per_class) + " per class; available present=" +
                            std::to_string(present.size()) + " absent=" + std::to_string(absent.size()));
    }
    Rng rng(derive_seed(seed, 0xBA1, slot));
    rng.shuffle(present);
    rng.shuffle(absent);
    std::vector<std::size_t> out(present.begin(), present.begin() + static_cast<std::ptrdiff_t>(n_per_class));
    out.insert(out.end(), absent.begin(), absent.begin() + static_cast<std::ptrdiff_t>(n_per_class));
    return out;
}

}  // namespace surrocon
