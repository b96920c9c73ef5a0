#pragma once

// Skeleton sequences, bone derivation, temporal repetition, augmentation,
// the SKL1 sample container, dataset manifests and the synthetic toy9
// generator.

#include <agcn/errors.hpp>
#include <agcn/graph.hpp>
#include <agcn/tensor.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace agcn {

// Values in [C][T][N][M] order, C slowest and M fastest. Absent persons and
// frames are exact zeros.
struct SkeletonSequence {
    std::size_t C = 0, T = 0, N = 0, M = 0;
    std::vector<float> data;
    std::size_t label = 0;
    std::string id;

    SkeletonSequence() = default;
    SkeletonSequence(std::size_t c, std::size_t t, std::size_t n, std::size_t m)
        : C(c), T(t), N(n), M(m), data(c * t * n * m, 0.0f)
    {
    }

    std::size_t index(std::size_t c, std::size_t t, std::size_t n, std::size_t m) const
    {
        return ((c * T + t) * N + n) * M + m;
    }
    float& at(std::size_t c, std::size_t t, std::size_t n, std::size_t m) { return data[index(c, t, n, m)]; }
    float at(std::size_t c, std::size_t t, std::size_t n, std::size_t m) const { return data[index(c, t, n, m)]; }

    // A joint slot counts as present when any coordinate is nonzero.
    bool present(std::size_t t, std::size_t n, std::size_t m) const
    {
        for (std::size_t c = 0; c < C; ++c)
            if (at(c, t, n, m) != 0.0f)
                return true;
        return false;
    }

    bool operator==(const SkeletonSequence&) const = default;
};

// ---------------------------------------------------------------------------
// Bones

inline constexpr std::size_t kNoParent = static_cast<std::size_t>(-1);

// parent[j] is the neighbor of j one hop closer to the center; kNoParent at
// the center.
inline std::vector<std::size_t> bone_parents(const SkeletonSpec& spec)
{
    const auto problems = spec_problems(spec, /*require_tree=*/true);
    if (!problems.empty())
        throw ValidationError("bones need an acyclic connected skeleton: " + problems.front());
    const auto hop = hop_distance(spec);
    const auto nbrs = detail::neighbor_lists(spec);
    std::vector<std::size_t> parent(spec.num_joints, kNoParent);
    for (std::size_t j = 0; j < spec.num_joints; ++j) {
        if (j == spec.center)
            continue;
        for (std::size_t p : nbrs[j])
            if (hop[p] + 1 == hop[j])
                parent[j] = p;
    }
    return parent;
}

inline SkeletonSequence joints_to_bones(const SkeletonSequence& seq, const SkeletonSpec& spec)
{
    if (seq.N != spec.num_joints)
        throw DimensionError("sequence has " + std::to_string(seq.N) + " joints, skeleton '" + spec.name + "' has " +
                             std::to_string(spec.num_joints));
    const auto parent = bone_parents(spec);
    SkeletonSequence out = seq;
    for (std::size_t c = 0; c < seq.C; ++c)
        for (std::size_t t = 0; t < seq.T; ++t)
            for (std::size_t n = 0; n < seq.N; ++n)
                for (std::size_t m = 0; m < seq.M; ++m)
                    out.at(c, t, n, m) = parent[n] == kNoParent ? 0.0f : seq.at(c, t, n, m) - seq.at(c, t, parent[n], m);
    return out;
}

// ---------------------------------------------------------------------------
// Temporal repetition and augmentation

inline SkeletonSequence pad_repeat(const SkeletonSequence& seq, std::size_t T_target)
{
    if (T_target < 1)
        throw ValidationError("pad_repeat: target length must be at least 1");
    if (seq.T < 1)
        throw ValidationError("pad_repeat: sequence '" + seq.id + "' has no frames");
    SkeletonSequence out(seq.C, T_target, seq.N, seq.M);
    out.label = seq.label;
    out.id = seq.id;
    const std::size_t frame = seq.N * seq.M;
    for (std::size_t c = 0; c < seq.C; ++c)
        for (std::size_t t = 0; t < T_target; ++t)
            std::copy_n(seq.data.begin() + static_cast<std::ptrdiff_t>(seq.index(c, t % seq.T, 0, 0)), frame,
                        out.data.begin() + static_cast<std::ptrdiff_t>(out.index(c, t, 0, 0)));
    return out;
}

// Zero-fills missing person slots up to M_target.
inline SkeletonSequence pad_persons(const SkeletonSequence& seq, std::size_t M_target)
{
    if (M_target < seq.M)
        throw ValidationError("sample '" + seq.id + "' has " + std::to_string(seq.M) + " persons, more than the " +
                              std::to_string(M_target) + " the network accepts");
    if (M_target == seq.M)
        return seq;
    SkeletonSequence out(seq.C, seq.T, seq.N, M_target);
    out.label = seq.label;
    out.id = seq.id;
    for (std::size_t c = 0; c < seq.C; ++c)
        for (std::size_t t = 0; t < seq.T; ++t)
            for (std::size_t n = 0; n < seq.N; ++n)
                for (std::size_t m = 0; m < seq.M; ++m)
                    out.at(c, t, n, m) = seq.at(c, t, n, m);
    return out;
}

namespace detail {

inline double rng_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double rng_symmetric(std::mt19937_64& rng, double bound) { return (2.0 * rng_uniform(rng) - 1.0) * bound; }

inline double rng_normal(std::mt19937_64& rng)
{
    const double u1 = 1.0 - rng_uniform(rng); // (0, 1]
    const double u2 = rng_uniform(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace detail

struct AugmentOptions {
    double max_angle = 0.3;  // radians, per axis
    double max_shift = 0.1;  // per axis
};

struct AugmentTransform {
    std::size_t start = 0;
    std::array<double, 3> angles{}; // rotation about x, y, z; 2D data uses angles[2]
    std::array<double, 3> shift{};
};

inline AugmentTransform sample_augment(const SkeletonSequence& seq, std::size_t crop_T, std::mt19937_64& rng,
                                       const AugmentOptions& opt = {})
{
    if (crop_T < 1 || crop_T > seq.T)
        throw ValidationError("augment: crop length " + std::to_string(crop_T) + " outside [1, " +
                              std::to_string(seq.T) + "]");
    AugmentTransform tr;
    tr.start = static_cast<std::size_t>(rng() % (seq.T - crop_T + 1));
    for (auto& a : tr.angles)
        a = detail::rng_symmetric(rng, opt.max_angle);
    for (auto& s : tr.shift)
        s = detail::rng_symmetric(rng, opt.max_shift);
    return tr;
}

inline SkeletonSequence apply_augment(const SkeletonSequence& seq, std::size_t crop_T, const AugmentTransform& tr)
{
    if (seq.C != 2 && seq.C != 3)
        throw ValidationError("augment: expected 2 or 3 coordinate channels, got " + std::to_string(seq.C));
    if (crop_T < 1 || tr.start + crop_T > seq.T)
        throw ValidationError("augment: crop window [" + std::to_string(tr.start) + ", " +
                              std::to_string(tr.start + crop_T) + ") exceeds " + std::to_string(seq.T) + " frames");
    // R = Rz * Ry * Rx
    std::array<std::array<double, 3>, 3> R{};
    if (seq.C == 3) {
        const double cx = std::cos(tr.angles[0]), sx = std::sin(tr.angles[0]);
        const double cy = std::cos(tr.angles[1]), sy = std::sin(tr.angles[1]);
        const double cz = std::cos(tr.angles[2]), sz = std::sin(tr.angles[2]);
        R = {{{cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx},
              {sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx},
              {-sy, cy * sx, cy * cx}}};
    } else {
        const double c = std::cos(tr.angles[2]), s = std::sin(tr.angles[2]);
        R = {{{c, -s, 0.0}, {s, c, 0.0}, {0.0, 0.0, 1.0}}};
    }
    SkeletonSequence out(seq.C, crop_T, seq.N, seq.M);
    out.label = seq.label;
    out.id = seq.id;
    for (std::size_t t = 0; t < crop_T; ++t)
        for (std::size_t n = 0; n < seq.N; ++n)
            for (std::size_t m = 0; m < seq.M; ++m) {
                const std::size_t src = tr.start + t;
                if (!seq.present(src, n, m))
                    continue;
                std::array<double, 3> p{};
                for (std::size_t c = 0; c < seq.C; ++c)
                    p[c] = seq.at(c, src, n, m);
                for (std::size_t r = 0; r < seq.C; ++r) {
                    double v = tr.shift[r];
                    for (std::size_t c = 0; c < seq.C; ++c)
                        v += R[r][c] * p[c];
                    out.at(r, t, n, m) = static_cast<float>(v);
                }
            }
    return out;
}

inline SkeletonSequence augment(const SkeletonSequence& seq, std::size_t crop_T, std::mt19937_64& rng,
                                const AugmentOptions& opt = {})
{
    return apply_augment(seq, crop_T, sample_augment(seq, crop_T, rng, opt));
}

// ---------------------------------------------------------------------------
// SKL1 container

inline constexpr std::array<char, 4> kSampleMagic{'S', 'K', 'L', '1'};
inline constexpr std::uint32_t kSampleVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p)
{
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint32_t checked_u32(std::size_t v, const char* what)
{
    if (v > 0xffffffffu)
        throw ValidationError(std::string(what) + " does not fit in 32 bits");
    return static_cast<std::uint32_t>(v);
}

inline std::string printable_bytes(std::string_view bytes)
{
    std::string out;
    char buf[8];
    for (unsigned char b : bytes) {
        if (!out.empty())
            out += ' ';
        std::snprintf(buf, sizeof buf, "%02x", b);
        out += buf;
    }
    return out;
}

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("failed writing '" + path.string() + "'");
}

} // namespace detail

inline std::string encode_sample(const SkeletonSequence& seq)
{
    if (seq.data.size() != seq.C * seq.T * seq.N * seq.M)
        throw DimensionError("sample '" + seq.id + "' payload does not match its shape");
    for (float v : seq.data)
        if (!std::isfinite(v))
            throw NonFiniteError("sample '" + seq.id + "' contains a non-finite value");
    std::string out(kSampleMagic.begin(), kSampleMagic.end());
    detail::put_u32(out, kSampleVersion);
    for (std::size_t d : {seq.C, seq.T, seq.N, seq.M, seq.label})
        detail::put_u32(out, detail::checked_u32(d, "sample dimension"));
    for (float v : seq.data) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        detail::put_u32(out, bits);
    }
    return out;
}

inline SkeletonSequence decode_sample(std::string_view bytes, const std::string& id = {})
{
    const std::string where = id.empty() ? "sample" : "sample '" + id + "'";
    constexpr std::size_t header = 4 + 4 * 6;
    if (bytes.size() < 4)
        throw TruncationError(where + ": " + std::to_string(bytes.size()) + " bytes, too short for the magic");
    if (!std::equal(kSampleMagic.begin(), kSampleMagic.end(), bytes.begin()))
        throw FormatError(where + ": bad magic, found bytes " + detail::printable_bytes(bytes.substr(0, 4)) +
                          " (expected 53 4b 4c 31 \"SKL1\")");
    if (bytes.size() < header)
        throw TruncationError(where + ": header truncated at " + std::to_string(bytes.size()) + " bytes");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const auto version = detail::get_u32(p + 4);
    if (version != kSampleVersion)
        throw FormatError(where + ": unsupported version " + std::to_string(version));
    SkeletonSequence seq(detail::get_u32(p + 8), detail::get_u32(p + 12), detail::get_u32(p + 16),
                         detail::get_u32(p + 20));
    seq.label = detail::get_u32(p + 24);
    seq.id = id;
    if (seq.C == 0 || seq.T == 0 || seq.N == 0 || seq.M == 0)
        throw FormatError(where + ": zero extent in shape");
    const std::size_t expected = header + 4 * seq.data.size();
    if (bytes.size() < expected)
        throw TruncationError(where + ": payload truncated, " + std::to_string(bytes.size()) + " of " +
                              std::to_string(expected) + " bytes");
    if (bytes.size() > expected)
        throw FormatError(where + ": " + std::to_string(bytes.size() - expected) + " trailing bytes");
    for (std::size_t i = 0; i < seq.data.size(); ++i) {
        const std::uint32_t bits = detail::get_u32(p + header + 4 * i);
        float v;
        std::memcpy(&v, &bits, 4);
        if (!std::isfinite(v))
            throw NonFiniteError(where + ": non-finite value at payload index " + std::to_string(i));
        seq.data[i] = v;
    }
    return seq;
}

inline void write_sample(const std::filesystem::path& path, const SkeletonSequence& seq)
{
    detail::write_file(path, encode_sample(seq));
}

// The id of a sample read from disk is its file stem.
inline SkeletonSequence read_sample(const std::filesystem::path& path)
{
    return decode_sample(detail::read_file(path), path.stem().string());
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestRecord {
    std::string path; // relative to the manifest directory unless absolute
    std::size_t label = 0;
    std::string split;

    bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::vector<std::string> class_names;
    std::string skeleton;
    std::size_t channels = 3;
    std::size_t frames = 0; // canonical length; 0 keeps stored lengths
    std::filesystem::path base_dir;

    std::size_t num_classes() const { return class_names.size(); }

    std::vector<ManifestRecord> split(const std::string& tag) const
    {
        std::vector<ManifestRecord> out;
        for (const auto& r : records)
            if (r.split == tag)
                out.push_back(r);
        return out;
    }

    std::filesystem::path resolve(const ManifestRecord& r) const
    {
        std::filesystem::path p(r.path);
        return p.is_absolute() ? p : base_dir / p;
    }
};

inline std::vector<std::string> manifest_problems(const DatasetManifest& m)
{
    std::vector<std::string> problems;
    if (m.class_names.empty())
        problems.push_back("manifest declares no classes");
    if (m.skeleton.empty())
        problems.push_back("manifest names no skeleton");
    std::map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        const auto& r = m.records[i];
        const std::string where = "record " + std::to_string(i + 1) + " (" + r.path + "): ";
        if (r.label >= m.num_classes())
            problems.push_back(where + "label " + std::to_string(r.label) + " >= " + std::to_string(m.num_classes()) +
                               " classes");
        if (r.split.empty())
            problems.push_back(where + "empty split tag");
        if (!seen.emplace(r.path, i).second)
            problems.push_back(where + "listed more than once");
    }
    return problems;
}

inline std::string format_manifest(const DatasetManifest& m)
{
    std::string out = "# classes = ";
    for (std::size_t i = 0; i < m.class_names.size(); ++i)
        out += (i ? "," : "") + m.class_names[i];
    out += "\n# skeleton = " + m.skeleton + "\n";
    out += "# channels = " + std::to_string(m.channels) + "\n";
    out += "# frames = " + std::to_string(m.frames) + "\n";
    for (const auto& r : m.records)
        out += r.path + "\t" + std::to_string(r.label) + "\t" + r.split + "\n";
    return out;
}

inline DatasetManifest parse_manifest(const std::string& text, std::filesystem::path base_dir = {})
{
    DatasetManifest m;
    m.base_dir = std::move(base_dir);
    std::vector<std::string> problems;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    auto parse_count = [&](const std::string& v, const std::string& where) -> std::size_t {
        try {
            std::size_t pos = 0;
            const auto n = std::stoull(v, &pos);
            if (pos == v.size())
                return static_cast<std::size_t>(n);
        } catch (const std::exception&) {
        }
        problems.push_back(where + "'" + v + "' is not a non-negative integer");
        return 0;
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        const std::string where = "line " + std::to_string(lineno) + ": ";
        if (trim(line).empty())
            continue;
        if (line[0] == '#') {
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                continue;
            const auto key = trim(std::string_view(line).substr(1, eq - 1));
            const auto value = trim(std::string_view(line).substr(eq + 1));
            if (key == "classes") {
                m.class_names.clear();
                std::stringstream ss(value);
                std::string name;
                while (std::getline(ss, name, ','))
                    m.class_names.push_back(trim(name));
            } else if (key == "skeleton") {
                m.skeleton = value;
            } else if (key == "channels") {
                m.channels = parse_count(value, where);
            } else if (key == "frames") {
                m.frames = parse_count(value, where);
            }
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, '\t'))
            fields.push_back(field);
        if (fields.size() != 3) {
            problems.push_back(where + "expected 'path<TAB>label<TAB>split', found " + std::to_string(fields.size()) +
                               " field(s)");
            continue;
        }
        m.records.push_back({fields[0], parse_count(fields[1], where), fields[2]});
    }
    for (auto& p : manifest_problems(m))
        problems.push_back(std::move(p));
    if (!problems.empty()) {
        std::string msg = "invalid manifest:";
        for (const auto& p : problems)
            msg += "\n  " + p;
        throw ValidationError(msg);
    }
    return m;
}

inline DatasetManifest read_manifest(const std::filesystem::path& path)
{
    return parse_manifest(detail::read_file(path), path.parent_path());
}

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& m)
{
    detail::write_file(path, format_manifest(m));
}

// Loads every sample of a split in manifest order, checks it against the
// manifest and repeats it to the canonical length when one is declared.
inline std::vector<SkeletonSequence> load_split(const DatasetManifest& m, const std::string& split)
{
    const auto records = m.split(split);
    if (records.empty())
        throw ValidationError("split '" + split + "' has no samples");
    std::vector<SkeletonSequence> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        auto seq = read_sample(m.resolve(r));
        if (seq.label != r.label)
            throw ValidationError("sample '" + r.path + "' stores label " + std::to_string(seq.label) +
                                  " but the manifest says " + std::to_string(r.label));
        if (seq.C != m.channels)
            throw ValidationError("sample '" + r.path + "' has " + std::to_string(seq.C) + " channels, manifest says " +
                                  std::to_string(m.channels));
        if (m.frames && seq.T != m.frames)
            seq = pad_repeat(seq, m.frames);
        out.push_back(std::move(seq));
    }
    return out;
}

// Stacks sequences of equal shape into [B, C, T, N, M].
template <class T>
Tensor<T> to_batch(const std::vector<const SkeletonSequence*>& seqs)
{
    if (seqs.empty())
        throw ValidationError("cannot batch zero sequences");
    const auto& first = *seqs.front();
    std::vector<T> values;
    values.reserve(seqs.size() * first.data.size());
    for (const auto* s : seqs) {
        if (s->C != first.C || s->T != first.T || s->N != first.N || s->M != first.M)
            throw DimensionError("sequence '" + s->id + "' shape differs from '" + first.id + "' within a batch");
        for (float v : s->data)
            values.push_back(static_cast<T>(v));
    }
    return Tensor<T>(Shape{seqs.size(), first.C, first.T, first.N, first.M}, std::move(values));
}

// ---------------------------------------------------------------------------
// Synthetic toy9 dataset

// Rest pose for toy9: 0 pelvis, 1 spine (center), 2 neck, 3-4 left arm,
// 5-6 right arm, 7-8 legs.
inline const std::vector<std::array<double, 3>>& toy9_rest_pose()
{
    static const std::vector<std::array<double, 3>> pose{
        {0.0, 0.0, 0.0},   {0.0, 0.5, 0.0},  {0.0, 1.0, 0.0},   {-0.3, 1.0, 0.05}, {-0.6, 1.0, 0.1},
        {0.3, 1.0, 0.05},  {0.6, 1.0, 0.1},  {-0.2, -0.6, 0.0}, {0.2, -0.6, 0.0},
    };
    return pose;
}

enum class ToyClass : std::size_t { still = 0, wave = 1, translate = 2, rotate = 3 };

inline const std::vector<std::string>& toy_class_names()
{
    static const std::vector<std::string> names{"still", "wave", "translate", "rotate"};
    return names;
}

struct SynthOptions {
    std::size_t per_class = 50;
    std::size_t val_per_class = 0;
    std::size_t frames = 32;
    std::uint64_t seed = 0;
    std::size_t persons = 1;
    double noise = 0.01;
    double jitter = 0.2;
};

struct SyntheticDataset {
    DatasetManifest manifest;
    std::vector<SkeletonSequence> samples; // aligned with manifest.records
};

inline SkeletonSequence synth_sample(ToyClass cls, std::size_t frames, std::size_t persons, double noise,
                                     double jitter, std::mt19937_64& rng)
{
    const auto& pose = toy9_rest_pose();
    const std::size_t N = pose.size();
    const double speed = 1.0 + detail::rng_symmetric(rng, jitter);
    const double phase = detail::rng_symmetric(rng, jitter) * 2.0 * std::numbers::pi;
    const double span = static_cast<double>(std::max<std::size_t>(1, frames - 1));
    const auto& pivot = pose[1];
    SkeletonSequence seq(3, frames, N, persons);
    seq.label = static_cast<std::size_t>(cls);
    for (std::size_t t = 0; t < frames; ++t) {
        const double s = static_cast<double>(t) / span;
        for (std::size_t n = 0; n < N; ++n) {
            auto p = pose[n];
            switch (cls) {
            case ToyClass::still:
                break;
            case ToyClass::wave:
                if (n == skeletons::kToyLeftArmTip)
                    p[1] += 0.5 * std::sin(2.0 * std::numbers::pi * speed * s + phase);
                break;
            case ToyClass::translate:
                p[0] += 1.0 * speed * s;
                break;
            case ToyClass::rotate: {
                const double a = 0.5 * std::numbers::pi * speed * s;
                const double dx = p[0] - pivot[0], dy = p[1] - pivot[1];
                p[0] = pivot[0] + std::cos(a) * dx - std::sin(a) * dy;
                p[1] = pivot[1] + std::sin(a) * dx + std::cos(a) * dy;
                break;
            }
            }
            for (std::size_t c = 0; c < 3; ++c)
                seq.at(c, t, n, 0) = static_cast<float>(p[c] + noise * detail::rng_normal(rng));
        }
    }
    return seq;
}

// Classes are interleaved within each split; sample files are named
// <split>/<split>_<index>.skl.
inline SyntheticDataset synth_generate(const SkeletonSpec& spec, const SynthOptions& opt)
{
    if (spec != toy9())
        throw ValidationError("synthetic data is only defined for the toy9 skeleton, got '" + spec.name + "'");
    if (opt.per_class == 0)
        throw ValidationError("synthetic dataset would have an empty train split (per-class count is 0)");
    if (opt.frames == 0 || opt.persons == 0)
        throw ValidationError("synthetic dataset needs at least one frame and one person");
    SyntheticDataset ds;
    ds.manifest.class_names = toy_class_names();
    ds.manifest.skeleton = spec.name;
    ds.manifest.channels = 3;
    ds.manifest.frames = opt.frames;
    std::mt19937_64 rng(opt.seed);
    const std::size_t K = toy_class_names().size();
    for (const auto& [split, count] : {std::pair<std::string, std::size_t>{"train", opt.per_class},
                                       std::pair<std::string, std::size_t>{"val", opt.val_per_class}}) {
        for (std::size_t i = 0; i < count * K; ++i) {
            auto seq = synth_sample(static_cast<ToyClass>(i % K), opt.frames, opt.persons, opt.noise, opt.jitter, rng);
            char name[64];
            std::snprintf(name, sizeof name, "%s_%05zu", split.c_str(), i);
            seq.id = name;
            ds.manifest.records.push_back({split + "/" + seq.id + ".skl", seq.label, split});
            ds.samples.push_back(std::move(seq));
        }
    }
    return ds;
}

inline void write_dataset(const std::filesystem::path& dir, SyntheticDataset& ds)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw IoError("cannot create '" + dir.string() + "': " + ec.message());
    ds.manifest.base_dir = dir;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto path = dir / ds.manifest.records[i].path;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec)
            throw IoError("cannot create '" + path.parent_path().string() + "': " + ec.message());
        write_sample(path, ds.samples[i]);
    }
    write_manifest(dir / "manifest.tsv", ds.manifest);
}

// ---------------------------------------------------------------------------
// Nearest-centroid separability check on handcrafted velocity features:
// per joint and axis the mean signed frame-to-frame velocity, plus per joint
// the mean speed. Only the first person is used.

inline std::vector<double> velocity_features(const SkeletonSequence& seq)
{
    std::vector<double> f(seq.N * seq.C + seq.N, 0.0);
    if (seq.T < 2)
        return f;
    const double steps = static_cast<double>(seq.T - 1);
    for (std::size_t n = 0; n < seq.N; ++n)
        for (std::size_t t = 0; t + 1 < seq.T; ++t) {
            double sq = 0.0;
            for (std::size_t c = 0; c < seq.C; ++c) {
                const double d = static_cast<double>(seq.at(c, t + 1, n, 0)) - seq.at(c, t, n, 0);
                f[n * seq.C + c] += d / steps;
                sq += d * d;
            }
            f[seq.N * seq.C + n] += std::sqrt(sq) / steps;
        }
    return f;
}

inline double nearest_centroid_accuracy(const std::vector<SkeletonSequence>& train,
                                        const std::vector<SkeletonSequence>& test, std::size_t num_classes)
{
    if (train.empty() || test.empty())
        throw ValidationError("nearest-centroid check needs non-empty train and test sets");
    std::vector<std::vector<double>> centroid(num_classes);
    std::vector<std::size_t> count(num_classes, 0);
    for (const auto& s : train) {
        const auto f = velocity_features(s);
        auto& c = centroid.at(s.label);
        if (c.empty())
            c.assign(f.size(), 0.0);
        for (std::size_t i = 0; i < f.size(); ++i)
            c[i] += f[i];
        ++count[s.label];
    }
    for (std::size_t k = 0; k < num_classes; ++k)
        for (auto& v : centroid[k])
            v /= static_cast<double>(count[k]);
    std::size_t correct = 0;
    for (const auto& s : test) {
        const auto f = velocity_features(s);
        double best = INFINITY;
        std::size_t arg = 0;
        for (std::size_t k = 0; k < num_classes; ++k) {
            if (centroid[k].empty())
                continue;
            double d = 0.0;
            for (std::size_t i = 0; i < f.size(); ++i)
                d += (f[i] - centroid[k][i]) * (f[i] - centroid[k][i]);
            if (d < best) {
                best = d;
                arg = k;
            }
        }
        correct += arg == s.label;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

} // namespace agcn
