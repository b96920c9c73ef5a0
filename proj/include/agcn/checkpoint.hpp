#pragma once

// Checkpoint container, little-endian:
//   "AGCK" | u32 version | u32 scalar bytes (4 or 8)
//   | str network | str skeleton | str run config | str class names
//   | u32 tensor count | per tensor: str name, u32 rank, u32 dims..., values
// where str is a u32 byte length followed by the bytes.

#include "config.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "model.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

namespace agcn {

inline constexpr char kCheckpointMagic[4] = {'A', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Network shape as `key = value` lines plus one `block = ...` line per block:
//   block = in out stride kernel dropout kind use_A use_B use_C use_M embed
inline std::string format_network_config(const NetworkConfig& cfg)
{
    std::string out;
    out += "num_classes = " + std::to_string(cfg.num_classes) + "\n";
    out += "in_channels = " + std::to_string(cfg.in_channels) + "\n";
    out += "max_persons = " + std::to_string(cfg.max_persons) + "\n";
    out += "alpha = " + detail::format_real(cfg.alpha) + "\n";
    for (const auto& b : cfg.blocks) {
        out += "block = " + std::to_string(b.in_channels) + " " + std::to_string(b.out_channels) + " " +
               std::to_string(b.stride) + " " + std::to_string(b.temporal_kernel) + " " +
               detail::format_real(b.dropout) + " " + to_string(b.kind) + " " + std::to_string(b.terms.use_A) + " " +
               std::to_string(b.terms.use_B) + " " + std::to_string(b.terms.use_C) + " " +
               std::to_string(b.use_mask) + " " + std::to_string(b.embed_channels) + "\n";
    }
    return out;
}

inline NetworkConfig parse_network_config(const std::string& text, SkeletonSpec skeleton)
{
    NetworkConfig cfg;
    cfg.skeleton = std::move(skeleton);
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("checkpoint network description: malformed line '" + line + "'");
        const auto key = trim(std::string_view(line).substr(0, eq));
        std::istringstream val(trim(std::string_view(line).substr(eq + 1)));
        bool ok = true;
        if (key == "num_classes")
            ok = static_cast<bool>(val >> cfg.num_classes);
        else if (key == "in_channels")
            ok = static_cast<bool>(val >> cfg.in_channels);
        else if (key == "max_persons")
            ok = static_cast<bool>(val >> cfg.max_persons);
        else if (key == "alpha")
            ok = static_cast<bool>(val >> cfg.alpha);
        else if (key == "block") {
            BlockConfig b;
            std::string kind;
            int a = 0, bb = 0, c = 0, m = 0;
            ok = static_cast<bool>(val >> b.in_channels >> b.out_channels >> b.stride >> b.temporal_kernel >>
                                   b.dropout >> kind >> a >> bb >> c >> m >> b.embed_channels);
            ok = ok && (kind == "adaptive" || kind == "baseline");
            b.kind = kind == "baseline" ? LayerKind::baseline : LayerKind::adaptive;
            b.terms = {a != 0, bb != 0, c != 0};
            b.use_mask = m != 0;
            cfg.blocks.push_back(b);
        } else {
            throw FormatError("checkpoint network description: unknown key '" + key + "'");
        }
        if (!ok)
            throw FormatError("checkpoint network description: bad value in '" + line + "'");
    }
    if (auto problems = network_config_problems(cfg); !problems.empty())
        throw FormatError("checkpoint network description is inconsistent: " + problems.front());
    return cfg;
}

template <class T>
struct Checkpoint {
    NetworkConfig network;
    std::string run_config;
    std::vector<std::string> class_names;
    std::vector<std::pair<std::string, Tensor<T>>> tensors;
};

namespace detail {

template <class T>
void put_scalar(std::string& out, T v)
{
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    U bits = std::bit_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i)
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <class T>
T get_scalar(const unsigned char* p)
{
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
        bits |= static_cast<U>(p[i]) << (8 * i);
    return std::bit_cast<T>(bits);
}

inline void put_str(std::string& out, std::string_view s)
{
    put_u32(out, checked_u32(s.size(), "string length"));
    out.append(s);
}

class Reader {
public:
    Reader(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

    const unsigned char* take(std::size_t n, const char* what)
    {
        if (bytes_.size() - pos_ < n)
            throw TruncationError(source_ + ": truncated while reading " + what + " (need " + std::to_string(n) +
                                  " bytes at offset " + std::to_string(pos_) + ", " +
                                  std::to_string(bytes_.size() - pos_) + " left)");
        const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
        pos_ += n;
        return p;
    }
    std::uint32_t u32(const char* what) { return get_u32(take(4, what)); }
    std::string str(const char* what)
    {
        const auto n = u32(what);
        const auto* p = take(n, what);
        return std::string(reinterpret_cast<const char*>(p), n);
    }
    bool done() const { return pos_ == bytes_.size(); }
    std::size_t pos() const { return pos_; }

private:
    std::string_view bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

} // namespace detail

template <class T>
std::string encode_checkpoint(const Network<T>& net, const std::string& run_config = {},
                              const std::vector<std::string>& class_names = {})
{
    std::string out(kCheckpointMagic, 4);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, sizeof(T));
    detail::put_str(out, format_network_config(net.config()));
    detail::put_str(out, format_skeleton_spec(net.config().skeleton));
    detail::put_str(out, run_config);
    std::string names;
    for (std::size_t i = 0; i < class_names.size(); ++i)
        names += (i ? "," : "") + class_names[i];
    detail::put_str(out, names);
    const auto& entries = net.parameters().entries();
    detail::put_u32(out, detail::checked_u32(entries.size(), "tensor count"));
    for (const auto& e : entries) {
        detail::put_str(out, e.name);
        const auto& shape = e.tensor.shape();
        detail::put_u32(out, detail::checked_u32(shape.size(), "rank"));
        for (auto d : shape)
            detail::put_u32(out, detail::checked_u32(d, "extent"));
        for (T v : e.tensor.data())
            detail::put_scalar(out, v);
    }
    return out;
}

template <class T>
Checkpoint<T> decode_checkpoint(std::string_view bytes, const std::string& source = "checkpoint")
{
    detail::Reader r(bytes, source);
    const auto* magic = r.take(4, "magic");
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw FormatError(source + ": not a checkpoint (magic bytes " +
                          detail::printable_bytes(std::string_view(reinterpret_cast<const char*>(magic), 4)) +
                          ", expected 41 47 43 4b)");
    if (auto v = r.u32("version"); v != kCheckpointVersion)
        throw FormatError(source + ": unsupported checkpoint version " + std::to_string(v));
    if (auto w = r.u32("scalar width"); w != sizeof(T))
        throw PrecisionError(source + ": checkpoint stores " + std::to_string(w * 8) + "-bit values, reader expects " +
                             std::to_string(sizeof(T) * 8));
    Checkpoint<T> ck;
    const auto net_text = r.str("network description");
    const auto skel_text = r.str("skeleton");
    ck.network = parse_network_config(net_text, parse_skeleton_spec(skel_text));
    ck.run_config = r.str("run config");
    const auto names = r.str("class names");
    if (!names.empty()) {
        std::istringstream in(names);
        std::string n;
        while (std::getline(in, n, ','))
            ck.class_names.push_back(n);
    }
    const auto count = r.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name = r.str("tensor name");
        const auto rank = r.u32("tensor rank");
        Shape shape;
        std::size_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape.push_back(r.u32("tensor extent"));
            n *= shape.back();
        }
        const auto* p = r.take(n * sizeof(T), "tensor values");
        std::vector<T> values(n);
        for (std::size_t j = 0; j < n; ++j) {
            values[j] = detail::get_scalar<T>(p + j * sizeof(T));
            if (!std::isfinite(values[j]))
                throw NonFiniteError(source + ": tensor '" + name + "' holds a non-finite value at index " +
                                     std::to_string(j));
        }
        ck.tensors.emplace_back(std::move(name), Tensor<T>(std::move(shape), std::move(values)));
    }
    if (!r.done())
        throw FormatError(source + ": " + std::to_string(bytes.size() - r.pos()) + " trailing bytes");
    return ck;
}

// Rebuilds the network and copies every stored tensor into it by name.
template <class T>
Network<T> restore_network(const Checkpoint<T>& ck)
{
    Network<T> net(ck.network, 0);
    auto& entries = net.parameters().entries();
    if (entries.size() != ck.tensors.size())
        throw FormatError("checkpoint holds " + std::to_string(ck.tensors.size()) + " tensors, the network has " +
                          std::to_string(entries.size()));
    for (const auto& [name, tensor] : ck.tensors) {
        auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.name == name; });
        if (it == entries.end())
            throw FormatError("checkpoint tensor '" + name + "' has no matching parameter");
        if (it->tensor.shape() != tensor.shape())
            throw FormatError("checkpoint tensor '" + name + "' has shape " + to_string(tensor.shape()) +
                              ", parameter has " + to_string(it->tensor.shape()));
        std::copy(tensor.data().begin(), tensor.data().end(), it->tensor.mutable_data().begin());
    }
    return net;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Network<T>& net, const std::string& run_config = {},
                     const std::vector<std::string>& class_names = {})
{
    detail::write_file(path, encode_checkpoint(net, run_config, class_names));
}

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path)
{
    return decode_checkpoint<T>(detail::read_file(path), path.string());
}

} // namespace agcn
