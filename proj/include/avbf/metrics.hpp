#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "avbf/net.hpp"
#include "avbf/solver.hpp"
#include "avbf/synth.hpp"
#include "avbf/trainer.hpp"

namespace avbf {

/// std(pred) / std(gt), both with 1/N normalization. Throws
/// UndefinedRatioError when the ground truth has zero variance, and
/// InvalidArgument for length mismatch or fewer than 2 samples.
double energy_ratio(const Eigen::VectorXd& prediction, const Eigen::VectorXd& ground_truth);

/// Maximal runs of >= min_run consecutive frames strictly below tau.
std::vector<std::pair<int, int>> closure_events(const Eigen::VectorXd& curve, double tau,
                                                int min_run);

struct ClosureMetrics {
    double recall = 1.0;
    double precision = 1.0;
};

/// Event-level overlap metrics for the jaw-open curve. An event counts as
/// hit when any opposing event shares a frame with it. No ground-truth
/// events means recall 1; no predicted events means precision 1.
ClosureMetrics closure_metrics(const Eigen::VectorXd& prediction,
                               const Eigen::VectorXd& ground_truth, double tau = 0.05,
                               int min_run = 2);

inline constexpr double kClosureTau = 0.05;
inline constexpr int kClosureMinRun = 2;

/// Predicted curves for one sequence under a given input mode (the absent
/// modality is zeroed at the input, the way dropout presents it).
/// Coefficients are clamped to [0,1] at this export boundary.
CurveTable infer_sequence(AvNet& net, const SynthDataset& dataset, int sequence, BatchMode mode);

struct ModeReport {
    std::string checkpoint;
    std::string mode;
    Eigen::VectorXd coefficient_mse;   // per coefficient, full-K order
    Eigen::VectorXd coefficient_energy_ratio;
    double closure_recall = 1.0;
    double closure_precision = 1.0;
    double speech_mse = 0.0;
    double nonspeech_mse = 0.0;
    double pose_rotation_mse = 0.0;
    double pose_translation_mse = 0.0;
};

struct EvalReport {
    std::vector<ModeReport> rows;
};

/// Metric aggregation over prediction/ground-truth curve pairs. Separated
/// from inference so an arbitrary predictor (including the ground truth
/// itself) can be scored.
ModeReport aggregate_report(const std::vector<CurveTable>& predictions,
                            const std::vector<const SynthSequence*>& truth,
                            const BlendshapeModel& model);

/// Metrics over the held-out sequences [holdout_start, end).
ModeReport evaluate_net(AvNet& net, const SynthDataset& dataset, BatchMode mode,
                        int holdout_start);

/// One row per checkpoint x input mode, computed on the dataset's held-out
/// tail. `holdout` sequences at the end of the dataset are used for
/// evaluation (at least one).
EvalReport ablation_report(const std::vector<std::string>& checkpoint_paths,
                           const SynthDataset& dataset, const std::vector<BatchMode>& modes,
                           int holdout);

void write_eval_csv(const EvalReport& report, const std::string& path);

/// Plain-text table ordering systems by speech-coefficient MSE.
std::string eval_summary(const EvalReport& report);

}  // namespace avbf
