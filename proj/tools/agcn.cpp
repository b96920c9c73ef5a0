#include <agcn/checkpoint.hpp>
#include <agcn/config.hpp>
#include <agcn/data.hpp>
#include <agcn/export.hpp>
#include <agcn/run.hpp>
#include <agcn/train.hpp>
#include <agcn/verify.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace agcn;

namespace {

enum Exit { ok = 0, validation = 1, runtime = 2, verification = 3 };

void print_accuracy(const char* label, const Accuracy& acc)
{
    std::printf("%s top1 = %.6f top5 = %.6f samples = %zu\n", label, acc.top1, acc.top5, acc.samples);
}

int cmd_gen_data(const std::string& spec_name, std::size_t per_class, std::size_t val_per_class, std::size_t frames,
                 std::uint64_t seed, std::size_t persons, const std::string& out)
{
    SynthOptions so;
    so.per_class = per_class;
    so.val_per_class = val_per_class;
    so.frames = frames;
    so.seed = seed;
    so.persons = persons;
    auto ds = synth_generate(resolve_skeleton(spec_name), so);
    write_dataset(out, ds);
    std::printf("wrote %zu samples to %s\n", ds.samples.size(), out.c_str());
    return ok;
}

int cmd_train(const std::string& config_path, const std::string& stream, const std::string& out)
{
    auto cfg = read_run_config(config_path);
    if (!stream.empty())
        cfg.stream = parse_stream(stream);
    const auto res = run_training(cfg, out, [](const EpochLog& e) {
        std::printf("%s\n", TrainReport::format_line(e).c_str());
        std::fflush(stdout);
    });
    std::printf("%s", res.report.summary().c_str());
    return ok;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest, const std::string& split,
             const std::string& out)
{
    const auto m = read_manifest(manifest);
    const auto ev = evaluate_checkpoint(checkpoint, m, split);
    print_accuracy(split.c_str(), ev.result.accuracy);
    std::printf("loss = %.9g\n", ev.result.loss);
    if (!out.empty())
        write_scores(out, ev.result.scores);
    return ok;
}

int cmd_fuse(const std::string& joints, const std::string& bones, const std::string& manifest, double weight,
             const std::string& out)
{
    const auto j = read_scores(joints);
    const auto b = read_scores(bones);
    const auto fused = fuse_scores(j, b, static_cast<float>(weight));
    if (!manifest.empty()) {
        const auto m = read_manifest(manifest);
        const auto labels = labels_for(fused, m);
        const auto K = fused.empty() ? 0 : fused.front().scores.size();
        print_accuracy("joints", accuracy_of(score_matrix(j), labels, K));
        print_accuracy("bones", accuracy_of(score_matrix(b), labels, K));
        print_accuracy("fused", accuracy_of(score_matrix(fused), labels, K));
    }
    if (!out.empty())
        write_scores(out, fused);
    return ok;
}

int cmd_gradcheck(const std::string& fragment, std::uint64_t seed)
{
    const std::vector<std::string> all = fragment == "all" ? gradcheck_fragments() : std::vector{fragment};
    bool passed = true;
    for (const auto& f : all) {
        const auto report = gradcheck_fragment(f, seed);
        std::printf("[%s]\n%s", f.c_str(), report.to_text().c_str());
        passed = passed && report.passed;
    }
    return passed ? ok : verification;
}

int cmd_export(const std::string& checkpoint, std::size_t layer, std::size_t subset, const std::string& term,
               const std::string& sample, const std::string& out)
{
    const auto which = parse_graph_term(term);
    auto ck = load_checkpoint<float>(checkpoint);
    auto net = restore_network(ck);
    if (layer == 0)
        throw ValidationError("layers are numbered from 1");
    std::optional<SkeletonSequence> seq;
    if (!sample.empty()) {
        Stream stream = Stream::joints;
        if (!ck.run_config.empty())
            stream = parse_run_config(ck.run_config).stream;
        auto s = pad_persons(read_sample(sample), net.config().max_persons);
        seq = prepare_stream({s}, stream, net.config().skeleton).front();
    }
    const auto m = layer_graph(net, layer - 1, subset, which, seq ? &*seq : nullptr);
    const auto img = to_gray(m);
    detail::write_file(out, encode_pgm(img));
    std::printf("wrote %zux%zu image to %s (min %.9g, max %.9g)\n", img.width, img.height, out.c_str(), img.min,
                img.max);
    return ok;
}

} // namespace

int main(int argc, char** argv)
{
    tune_allocator();
    CLI::App app{"Adaptive graph convolution for skeleton action recognition"};
    app.require_subcommand(1);

    std::string spec = "toy9", out, config, stream, checkpoint, manifest, split = "val", scores_j, scores_b, fragment,
                term = "A", sample;
    std::size_t per_class = 50, val_per_class = 0, frames = 32, persons = 1, layer = 1, subset = 0;
    std::uint64_t seed = 0;
    double weight = 1.0;

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic toy dataset");
    gen->add_option("--spec", spec, "Skeleton name or spec file")->capture_default_str();
    gen->add_option("--per-class", per_class, "Training samples per class")->capture_default_str();
    gen->add_option("--val-per-class", val_per_class, "Validation samples per class")->capture_default_str();
    gen->add_option("--frames", frames, "Frames per sample")->capture_default_str();
    gen->add_option("--persons", persons, "Persons per sample")->capture_default_str();
    gen->add_option("--seed", seed, "Random seed")->capture_default_str();
    gen->add_option("--out", out, "Output directory")->required();

    auto* tr = app.add_subcommand("train", "Train one stream from a run configuration");
    tr->add_option("--config", config, "Run configuration file")->required()->check(CLI::ExistingFile);
    tr->add_option("--stream", stream, "Override the configured stream")->check(CLI::IsMember({"joints", "bones"}));
    tr->add_option("--out", out, "Output directory")->required();

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
    ev->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    ev->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
    ev->add_option("--split", split)->capture_default_str();
    ev->add_option("--out", out, "Write per-sample scores here");

    auto* fu = app.add_subcommand("fuse", "Add joint-stream and bone-stream scores");
    fu->add_option("--scores-j", scores_j)->required()->check(CLI::ExistingFile);
    fu->add_option("--scores-b", scores_b)->required()->check(CLI::ExistingFile);
    fu->add_option("--manifest", manifest, "Manifest with labels, for accuracy")->check(CLI::ExistingFile);
    fu->add_option("--weight-b", weight, "Bone-stream weight")->capture_default_str();
    fu->add_option("--out", out, "Write fused scores here");

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check");
    gc->add_option("--fragment", fragment, "gaussian, layer, block, network or all")
        ->required()
        ->check(CLI::IsMember({"gaussian", "layer", "block", "network", "all"}));
    gc->add_option("--seed", seed)->capture_default_str();

    auto* ex = app.add_subcommand("export-adjacency", "Write one layer's graph as a PGM image");
    ex->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    ex->add_option("--layer", layer, "Block number, from 1")->capture_default_str();
    ex->add_option("--subset", subset, "0 root, 1 centripetal, 2 centrifugal")->capture_default_str();
    ex->add_option("--term", term, "A, B, C or sum")->capture_default_str();
    ex->add_option("--sample", sample, "Sample file, needed for C")->check(CLI::ExistingFile);
    ex->add_option("--out", out, "Output .pgm")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : validation;
    }

    try {
        if (*gen)
            return cmd_gen_data(spec, per_class, val_per_class, frames, seed, persons, out);
        if (*tr)
            return cmd_train(config, stream, out);
        if (*ev)
            return cmd_eval(checkpoint, manifest, split, out);
        if (*fu)
            return cmd_fuse(scores_j, scores_b, manifest, weight, out);
        if (*gc)
            return cmd_gradcheck(fragment, seed);
        if (*ex)
            return cmd_export(checkpoint, layer, subset, term, sample, out);
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return validation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return runtime;
    }
    return ok;
}
