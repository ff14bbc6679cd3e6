// avbf command line: synth | fit | train | infer | eval | export.
// Thin shell over the C API in avbf/avbf.h; all real work happens in the
// shared library.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "avbf/avbf.h"

namespace {

int fail_if(avbf_status status) {
    if (status == AVBF_OK) return 0;
    std::fprintf(stderr, "avbf: %s\n", avbf_last_error());
    return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"audiovisual blendshape fitting toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_path, data_path, mode = "av";
    std::string checkpoint, weights_path, model_path, curves_path;
    std::vector<std::string> checkpoints, modes;
    std::uint64_t seed = 0;
    bool has_seed = false, causal = false;
    int sequence = 0, holdout = 2;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset directory");
    synth->add_option("--config", config_path, "synth config JSON");
    synth->add_option("--seed", seed, "seed override")->each([&](const std::string&) { has_seed = true; });
    synth->add_option("--out", out_path, "output directory")->required();

    auto* fit = app.add_subcommand("fit", "offline coefficient extraction to a curves CSV");
    fit->add_option("--data", data_path, "dataset directory or observations JSON")->required();
    fit->add_option("--sequence", sequence, "sequence index in a dataset directory");
    fit->add_option("--weights", weights_path, "fit weights JSON (depth, landmark, l1)");
    fit->add_option("--model", model_path, "model JSON (required for observations JSON input)");
    fit->add_option("--out", out_path, "output CSV path")->required();

    auto* train = app.add_subcommand("train", "train the audiovisual network");
    train->add_option("--config", config_path, "train config JSON");
    train->add_option("--data", data_path, "dataset directory")->required();
    train->add_option("--seed", seed, "seed override")->each([&](const std::string&) { has_seed = true; });
    train->add_flag("--causal", causal, "use the causal audio context variant");
    train->add_option("--out", out_path, "output directory (checkpoint.avbf, metrics.csv)")->required();

    auto* infer = app.add_subcommand("infer", "predict curves for one sequence");
    infer->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
    infer->add_option("--data", data_path, "dataset directory")->required();
    infer->add_option("--sequence", sequence, "sequence index");
    infer->add_option("--mode", mode, "input mode: av|video|audio")->capture_default_str();
    infer->add_option("--out", out_path, "output CSV path")->required();

    auto* eval = app.add_subcommand("eval", "ablation metrics over checkpoints and input modes");
    eval->add_option("--checkpoint", checkpoints, "checkpoint path (repeatable)")->required();
    eval->add_option("--data", data_path, "dataset directory")->required();
    eval->add_option("--mode", modes, "input mode (repeatable; default av,video,audio)");
    eval->add_option("--holdout", holdout, "held-out sequences at the dataset tail")->capture_default_str();
    eval->add_option("--out", out_path, "output directory (eval.csv, summary.txt)")->required();

    auto* exp = app.add_subcommand("export", "OBJ sequence from a curves CSV");
    exp->add_option("--model", model_path, "model JSON")->required();
    exp->add_option("--curves", curves_path, "curves CSV")->required();
    exp->add_option("--out", out_path, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    if (synth->parsed())
        return fail_if(avbf_cmd_synth(config_path.c_str(), has_seed, seed, out_path.c_str()));

    if (fit->parsed())
        return fail_if(avbf_cmd_fit(data_path.c_str(), sequence, weights_path.c_str(),
                                    model_path.c_str(), out_path.c_str()));

    if (train->parsed())
        return fail_if(avbf_cmd_train(config_path.c_str(), data_path.c_str(), has_seed, seed,
                                      train->count("--causal") ? (causal ? 1 : 0) : -1,
                                      out_path.c_str()));

    if (infer->parsed())
        return fail_if(avbf_cmd_infer(checkpoint.c_str(), data_path.c_str(), sequence,
                                      mode.c_str(), out_path.c_str()));

    if (eval->parsed()) {
        if (modes.empty()) modes = {"av", "video", "audio"};
        std::vector<const char*> ckpt_ptrs, mode_ptrs;
        for (const auto& c : checkpoints) ckpt_ptrs.push_back(c.c_str());
        for (const auto& m : modes) mode_ptrs.push_back(m.c_str());
        const avbf_status status =
            avbf_cmd_eval(ckpt_ptrs.data(), static_cast<int32_t>(ckpt_ptrs.size()),
                          data_path.c_str(), mode_ptrs.data(),
                          static_cast<int32_t>(mode_ptrs.size()), holdout, out_path.c_str());
        if (status == AVBF_OK) {
            std::string summary_path = out_path + "/summary.txt";
            if (FILE* f = std::fopen(summary_path.c_str(), "r")) {
                char buf[512];
                while (std::fgets(buf, sizeof(buf), f)) std::fputs(buf, stdout);
                std::fclose(f);
            }
        }
        return fail_if(status);
    }

    if (exp->parsed())
        return fail_if(avbf_cmd_export(model_path.c_str(), curves_path.c_str(), out_path.c_str()));

    return 1;
}
