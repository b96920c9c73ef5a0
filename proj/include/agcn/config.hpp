#pragma once

// Run configuration: line-oriented `key = value` text grouped under [data],
// [model] and [train] sections. `#` starts a comment.

#include "data.hpp"
#include "errors.hpp"
#include "graph.hpp"
#include "model.hpp"
#include "train.hpp"

#include <charconv>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace agcn {

struct RunConfig {
    // [data]
    std::string manifest;
    std::string train_split = "train";
    std::string val_split = "val";
    Stream stream = Stream::joints;

    // [model]
    std::string skeleton; // empty: take the manifest's skeleton
    std::vector<std::size_t> channels = desk_channel_plan();
    std::vector<std::size_t> strides = default_stride_plan();
    std::size_t temporal_kernel = 9;
    double dropout = 0.5;
    LayerKind layer_kind = LayerKind::adaptive;
    bool use_A = true;
    bool use_B = true;
    bool use_C = true;
    bool use_M = true;
    std::size_t embed_channels = 0;
    double alpha = kDefaultAlpha;
    std::size_t persons = 0; // 0: largest person count in the training split

    // [train]
    std::size_t epochs = 100;
    std::size_t batch_size = 16;
    double base_lr = desk_schedule().base_lr;
    std::vector<std::size_t> milestones = desk_schedule().milestones;
    double lr_factor = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    bool nesterov = true;
    std::uint64_t seed = 0;
    bool augment = false;
    std::size_t crop_frames = 0;

    std::filesystem::path base_dir; // relative manifest paths resolve here

    std::filesystem::path manifest_path() const
    {
        std::filesystem::path p(manifest);
        return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    }

    NetworkOptions network_options() const
    {
        NetworkOptions o;
        o.channels = channels;
        o.strides = strides;
        o.temporal_kernel = temporal_kernel;
        o.dropout = dropout;
        o.kind = layer_kind;
        o.terms = {use_A, use_B, use_C};
        o.use_mask = use_M;
        o.embed_channels = embed_channels;
        o.alpha = alpha;
        return o;
    }

    // Fewer epochs than the milestones span runs a prefix of the schedule.
    LrSchedule schedule() const
    {
        std::size_t end = epochs;
        for (auto m : milestones)
            end = std::max(end, m + 1);
        return {base_lr, milestones, lr_factor, end};
    }

    TrainOptions train_options() const
    {
        TrainOptions t;
        t.epochs = epochs;
        t.batch_size = batch_size;
        t.schedule = schedule();
        t.sgd = {momentum, weight_decay, nesterov};
        t.seed = seed;
        t.augment = augment;
        t.crop_frames = crop_frames;
        return t;
    }
};

inline std::string to_string(LayerKind k) { return k == LayerKind::adaptive ? "adaptive" : "baseline"; }

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& v)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i)
        out += (i ? " " : "") + std::to_string(v[i]);
    return out;
}

inline std::string format_real(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

inline std::vector<std::string> run_config_problems(const RunConfig& c)
{
    std::vector<std::string> p;
    if (c.manifest.empty())
        p.push_back("data.manifest is required");
    if (c.train_split.empty())
        p.push_back("data.train_split must not be empty");
    if (c.channels.empty())
        p.push_back("model.channels must list at least one block");
    if (c.channels.size() != c.strides.size())
        p.push_back("model.channels has " + std::to_string(c.channels.size()) + " entries but model.strides has " +
                    std::to_string(c.strides.size()));
    for (auto ch : c.channels)
        if (ch == 0) {
            p.push_back("model.channels entries must be positive");
            break;
        }
    for (auto s : c.strides)
        if (s == 0) {
            p.push_back("model.strides entries must be positive");
            break;
        }
    if (c.temporal_kernel % 2 == 0)
        p.push_back("model.temporal_kernel must be odd");
    if (!(c.dropout >= 0.0 && c.dropout < 1.0))
        p.push_back("model.dropout must lie in [0, 1)");
    if (!(c.alpha > 0.0))
        p.push_back("model.alpha must be positive");
    if (c.layer_kind == LayerKind::adaptive && !(c.use_A || c.use_B || c.use_C))
        p.push_back("model.use_A, model.use_B and model.use_C are all false: the adaptive layer has no graph term");
    if (c.epochs == 0)
        p.push_back("train.epochs must be positive");
    if (c.batch_size == 0)
        p.push_back("train.batch_size must be positive");
    for (const auto& s : schedule_problems(c.schedule()))
        p.push_back("train: " + s);
    if (!(c.momentum >= 0.0 && c.momentum < 1.0))
        p.push_back("train.momentum must lie in [0, 1)");
    if (!(c.weight_decay >= 0.0))
        p.push_back("train.weight_decay must be non-negative");
    if (c.crop_frames && !c.augment)
        p.push_back("train.crop_frames requires train.augment = true");
    return p;
}

inline RunConfig parse_run_config(const std::string& text, std::filesystem::path base_dir = {})
{
    RunConfig c;
    c.base_dir = std::move(base_dir);
    std::vector<std::string> problems;

    auto to_size = [](const std::string& v, std::size_t& out) {
        const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
        return r.ec == std::errc() && r.ptr == v.data() + v.size() && !v.empty();
    };
    auto to_real = [](const std::string& v, double& out) {
        try {
            std::size_t used = 0;
            out = std::stod(v, &used);
            return used == v.size() && std::isfinite(out);
        } catch (const std::exception&) {
            return false;
        }
    };
    auto to_bool = [](const std::string& v, bool& out) {
        if (v == "true" || v == "on" || v == "1")
            return out = true, true;
        if (v == "false" || v == "off" || v == "0")
            return out = false, true;
        return false;
    };
    auto to_sizes = [&](std::string v, std::vector<std::size_t>& out) {
        std::replace(v.begin(), v.end(), ',', ' ');
        std::istringstream in(v);
        std::vector<std::size_t> vals;
        std::string tok;
        while (in >> tok) {
            std::size_t x = 0;
            if (!to_size(tok, x))
                return false;
            vals.push_back(x);
        }
        out = std::move(vals);
        return true;
    };

    using Setter = std::function<bool(const std::string&)>;
    const std::map<std::string, Setter> keys{
        {"data.manifest", [&](const std::string& v) { c.manifest = v; return !v.empty(); }},
        {"data.train_split", [&](const std::string& v) { c.train_split = v; return !v.empty(); }},
        {"data.val_split", [&](const std::string& v) { c.val_split = v; return true; }},
        {"data.stream",
         [&](const std::string& v) {
             if (v != "joints" && v != "bones")
                 return false;
             c.stream = parse_stream(v);
             return true;
         }},
        {"model.skeleton", [&](const std::string& v) { c.skeleton = v; return true; }},
        {"model.channels", [&](const std::string& v) { return to_sizes(v, c.channels); }},
        {"model.strides", [&](const std::string& v) { return to_sizes(v, c.strides); }},
        {"model.temporal_kernel", [&](const std::string& v) { return to_size(v, c.temporal_kernel); }},
        {"model.dropout", [&](const std::string& v) { return to_real(v, c.dropout); }},
        {"model.layer_kind",
         [&](const std::string& v) {
             if (v == "adaptive")
                 c.layer_kind = LayerKind::adaptive;
             else if (v == "baseline")
                 c.layer_kind = LayerKind::baseline;
             else
                 return false;
             return true;
         }},
        {"model.use_A", [&](const std::string& v) { return to_bool(v, c.use_A); }},
        {"model.use_B", [&](const std::string& v) { return to_bool(v, c.use_B); }},
        {"model.use_C", [&](const std::string& v) { return to_bool(v, c.use_C); }},
        {"model.use_M", [&](const std::string& v) { return to_bool(v, c.use_M); }},
        {"model.embed_channels", [&](const std::string& v) { return to_size(v, c.embed_channels); }},
        {"model.alpha", [&](const std::string& v) { return to_real(v, c.alpha); }},
        {"model.persons", [&](const std::string& v) { return to_size(v, c.persons); }},
        {"train.epochs", [&](const std::string& v) { return to_size(v, c.epochs); }},
        {"train.batch_size", [&](const std::string& v) { return to_size(v, c.batch_size); }},
        {"train.base_lr", [&](const std::string& v) { return to_real(v, c.base_lr); }},
        {"train.milestones", [&](const std::string& v) { return to_sizes(v, c.milestones); }},
        {"train.lr_factor", [&](const std::string& v) { return to_real(v, c.lr_factor); }},
        {"train.momentum", [&](const std::string& v) { return to_real(v, c.momentum); }},
        {"train.weight_decay", [&](const std::string& v) { return to_real(v, c.weight_decay); }},
        {"train.nesterov", [&](const std::string& v) { return to_bool(v, c.nesterov); }},
        {"train.seed",
         [&](const std::string& v) {
             std::size_t s = 0;
             if (!to_size(v, s))
                 return false;
             c.seed = s;
             return true;
         }},
        {"train.augment", [&](const std::string& v) { return to_bool(v, c.augment); }},
        {"train.crop_frames", [&](const std::string& v) { return to_size(v, c.crop_frames); }},
    };

    std::istringstream in(text);
    std::string line, section;
    std::map<std::string, std::size_t> seen;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty())
            continue;
        const std::string where = "line " + std::to_string(lineno) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') {
                problems.push_back(where + "malformed section header '" + line + "'");
                continue;
            }
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            if (section != "data" && section != "model" && section != "train")
                problems.push_back(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            problems.push_back(where + "expected key = value");
            continue;
        }
        const auto key = trim(std::string_view(line).substr(0, eq));
        const auto value = trim(std::string_view(line).substr(eq + 1));
        if (section.empty()) {
            problems.push_back(where + "key '" + key + "' appears before any section header");
            continue;
        }
        const auto full = section + "." + key;
        const auto it = keys.find(full);
        if (it == keys.end()) {
            problems.push_back(where + "unknown key '" + key + "' in [" + section + "]");
            continue;
        }
        if (auto [pos, fresh] = seen.emplace(full, lineno); !fresh)
            problems.push_back(where + "'" + full + "' already set on line " + std::to_string(pos->second));
        if (!it->second(value))
            problems.push_back(where + "bad value '" + value + "' for " + full);
    }
    for (auto& p : run_config_problems(c))
        problems.push_back(std::move(p));
    if (!problems.empty()) {
        std::string msg = "invalid run configuration (" + std::to_string(problems.size()) + " problem" +
                          (problems.size() == 1 ? "" : "s") + "):";
        for (const auto& p : problems)
            msg += "\n  " + p;
        throw ConfigError(msg);
    }
    return c;
}

inline RunConfig read_run_config(const std::filesystem::path& path)
{
    return parse_run_config(detail::read_file(path), path.parent_path());
}

// Every key with its resolved value; parses back to the same configuration.
inline std::string format_run_config(const RunConfig& c)
{
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    std::string out;
    out += "[data]\n";
    out += "manifest = " + c.manifest_path().string() + "\n";
    out += "train_split = " + c.train_split + "\n";
    out += "val_split = " + c.val_split + "\n";
    out += "stream = " + to_string(c.stream) + "\n";
    out += "\n[model]\n";
    out += "skeleton = " + c.skeleton + "\n";
    out += "channels = " + detail::join_sizes(c.channels) + "\n";
    out += "strides = " + detail::join_sizes(c.strides) + "\n";
    out += "temporal_kernel = " + std::to_string(c.temporal_kernel) + "\n";
    out += "dropout = " + detail::format_real(c.dropout) + "\n";
    out += "layer_kind = " + to_string(c.layer_kind) + "\n";
    out += "use_A = " + b(c.use_A) + "\n";
    out += "use_B = " + b(c.use_B) + "\n";
    out += "use_C = " + b(c.use_C) + "\n";
    out += "use_M = " + b(c.use_M) + "\n";
    out += "embed_channels = " + std::to_string(c.embed_channels) + "\n";
    out += "alpha = " + detail::format_real(c.alpha) + "\n";
    out += "persons = " + std::to_string(c.persons) + "\n";
    out += "\n[train]\n";
    out += "epochs = " + std::to_string(c.epochs) + "\n";
    out += "batch_size = " + std::to_string(c.batch_size) + "\n";
    out += "base_lr = " + detail::format_real(c.base_lr) + "\n";
    out += "milestones = " + detail::join_sizes(c.milestones) + "\n";
    out += "lr_factor = " + detail::format_real(c.lr_factor) + "\n";
    out += "momentum = " + detail::format_real(c.momentum) + "\n";
    out += "weight_decay = " + detail::format_real(c.weight_decay) + "\n";
    out += "nesterov = " + b(c.nesterov) + "\n";
    out += "seed = " + std::to_string(c.seed) + "\n";
    out += "augment = " + b(c.augment) + "\n";
    out += "crop_frames = " + std::to_string(c.crop_frames) + "\n";
    return out;
}

// Table-1 style ablations applied on top of a configuration.
inline RunConfig ablation(RunConfig c, const std::string& name)
{
    if (name == "agcn") {
        c.layer_kind = LayerKind::adaptive;
        c.use_A = c.use_B = c.use_C = true;
    } else if (name == "baseline") {
        c.layer_kind = LayerKind::baseline;
        c.use_M = true;
    } else if (name == "wo_M") {
        c.layer_kind = LayerKind::baseline;
        c.use_M = false;
    } else if (name == "wo_A" || name == "wo_B" || name == "wo_C") {
        c.layer_kind = LayerKind::adaptive;
        c.use_A = name != "wo_A";
        c.use_B = name != "wo_B";
        c.use_C = name != "wo_C";
    } else {
        throw ValidationError("unknown ablation '" + name + "' (expected agcn, baseline, wo_M, wo_A, wo_B or wo_C)");
    }
    return c;
}

inline const std::vector<std::string>& ablation_names()
{
    static const std::vector<std::string> names{"baseline", "wo_M", "wo_A", "wo_B", "wo_C", "agcn"};
    return names;
}

} // namespace agcn
