#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace avbf {

/// Path-level command implementations shared by the C API and (through it)
/// the CLI. Every function throws avbf::Error subclasses on failure.

/// Generates a dataset directory from a synth config (JSON file, or defaults
/// when empty). A seed override replaces the config seed.
void cmd_synth(const std::string& config_path, std::optional<std::uint64_t> seed,
               const std::string& out_dir);

/// Offline coefficient extraction. `data_path` is a dataset directory or a
/// small-case observations JSON (then `model_path` must name a model file).
/// Writes the curves CSV.
void cmd_fit(const std::string& data_path, int sequence, const std::string& weights_path,
             const std::string& model_path, const std::string& out_csv);

/// Trains on a dataset directory; writes checkpoint.avbf and metrics.csv
/// into out_dir. Overrides replace the config's seed / causal flag.
void cmd_train(const std::string& config_path, const std::string& data_dir,
               std::optional<std::uint64_t> seed, std::optional<bool> causal,
               const std::string& out_dir);

/// Predicted curves for one sequence under an input mode (av|video|audio).
void cmd_infer(const std::string& checkpoint_path, const std::string& data_dir, int sequence,
               const std::string& mode, const std::string& out_csv);

/// Ablation table over checkpoints x modes on the dataset's held-out tail;
/// writes eval.csv and summary.txt into out_dir. Returns the summary text.
std::string cmd_eval(const std::vector<std::string>& checkpoint_paths, const std::string& data_dir,
                     const std::vector<std::string>& modes, int holdout,
                     const std::string& out_dir);

/// OBJ sequence from a curves CSV: frame_%04d.obj per row, posed mesh.
void cmd_export(const std::string& model_path, const std::string& curves_path,
                const std::string& out_dir);

}  // namespace avbf
