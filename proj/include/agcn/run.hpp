#pragma once

// Experiment plumbing shared by the command-line tool and the acceptance
// harness: load a dataset for a run configuration, train, write artifacts,
// and re-evaluate checkpoints.

#include "checkpoint.hpp"
#include "config.hpp"
#include "data.hpp"
#include "model.hpp"
#include "train.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace agcn {

// Training allocates and frees the same large activation buffers every step;
// keeping them on the heap instead of fresh mmap pages avoids page faults.
inline void tune_allocator()
{
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

inline SkeletonSpec manifest_skeleton(const DatasetManifest& m)
{
    auto builtins = builtin_specs();
    if (auto it = builtins.find(m.skeleton); it != builtins.end())
        return it->second;
    std::filesystem::path p(m.skeleton);
    return load_skeleton_spec((p.is_absolute() ? p : m.base_dir / p).string());
}

struct RunData {
    DatasetManifest manifest;
    SkeletonSpec skeleton;
    std::vector<SkeletonSequence> train, val;
    std::size_t persons = 1;
};

// Loads one split, applies the stream transform and pads persons.
inline std::vector<SkeletonSequence> load_stream(const DatasetManifest& m, const std::string& split,
                                                 const SkeletonSpec& skeleton, Stream stream, std::size_t persons)
{
    auto seqs = load_split(m, split);
    for (auto& s : seqs) {
        if (s.N != skeleton.num_joints)
            throw ValidationError("sample '" + s.id + "' has " + std::to_string(s.N) + " joints, skeleton '" +
                                  skeleton.name + "' has " + std::to_string(skeleton.num_joints));
        s = pad_persons(s, persons);
    }
    return prepare_stream(std::move(seqs), stream, skeleton);
}

inline RunData load_run_data(const RunConfig& cfg)
{
    RunData d;
    d.manifest = read_manifest(cfg.manifest_path());
    d.skeleton = cfg.skeleton.empty() ? manifest_skeleton(d.manifest) : resolve_skeleton(cfg.skeleton);
    std::size_t persons = cfg.persons;
    if (persons == 0) {
        for (const auto& s : load_split(d.manifest, cfg.train_split))
            persons = std::max(persons, s.M);
    }
    d.persons = persons;
    d.train = load_stream(d.manifest, cfg.train_split, d.skeleton, cfg.stream, persons);
    if (!cfg.val_split.empty() && !d.manifest.split(cfg.val_split).empty())
        d.val = load_stream(d.manifest, cfg.val_split, d.skeleton, cfg.stream, persons);
    return d;
}

inline NetworkConfig network_config_for(const RunConfig& cfg, const RunData& d)
{
    return make_network_config(d.skeleton, d.manifest.channels, d.manifest.num_classes(), d.persons,
                               cfg.network_options());
}

struct RunResult {
    TrainReport report;
    std::vector<ScoreRow> val_scores;
    std::filesystem::path out_dir;
};

// Trains per `cfg` and writes into out_dir:
//   config.txt       resolved configuration
//   train_log.txt    one line per epoch
//   summary.txt      key = value summary
//   model.agck       final checkpoint
//   scores_<val>.tsv final validation scores (when a validation split exists)
inline RunResult run_training(const RunConfig& cfg, const std::filesystem::path& out_dir,
                              const std::function<void(const EpochLog&)>& on_epoch = {})
{
    std::filesystem::create_directories(out_dir);
    const auto resolved = format_run_config(cfg);
    detail::write_file(out_dir / "config.txt", resolved);
    auto data = load_run_data(cfg);
    Network<float> net(network_config_for(cfg, data), cfg.seed);

    RunResult res;
    res.out_dir = out_dir;
    res.report = train(net, data.train, data.val, cfg.train_options(), on_epoch);
    const auto ckpt = out_dir / "model.agck";
    save_checkpoint(ckpt, net, resolved, data.manifest.class_names);
    res.report.checkpoint = ckpt.string();
    detail::write_file(out_dir / "train_log.txt", res.report.log_text());
    detail::write_file(out_dir / "summary.txt", res.report.summary());
    if (!data.val.empty()) {
        res.val_scores = evaluate(net, data.val, cfg.batch_size).scores;
        write_scores(out_dir / ("scores_" + cfg.val_split + ".tsv"), res.val_scores);
    }
    return res;
}

struct CheckpointEval {
    EvalResult result;
    Stream stream = Stream::joints;
};

// Evaluates a float checkpoint on one split of a manifest, applying the
// stream recorded in the checkpoint's configuration.
inline CheckpointEval evaluate_checkpoint(const std::filesystem::path& checkpoint, const DatasetManifest& m,
                                          const std::string& split)
{
    const auto ck = load_checkpoint<float>(checkpoint);
    CheckpointEval out;
    std::size_t batch = 16;
    if (!ck.run_config.empty()) {
        const auto cfg = parse_run_config(ck.run_config);
        out.stream = cfg.stream;
        batch = cfg.batch_size;
    }
    auto net = restore_network(ck);
    if (net.config().num_classes != m.num_classes())
        throw ValidationError("checkpoint has " + std::to_string(net.config().num_classes) +
                              " classes, manifest has " + std::to_string(m.num_classes()));
    const auto seqs = load_stream(m, split, net.config().skeleton, out.stream, net.config().max_persons);
    out.result = evaluate(net, seqs, batch);
    return out;
}

} // namespace agcn
