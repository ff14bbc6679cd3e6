#include "avbf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace avbf {

namespace {

double stddev(const Eigen::VectorXd& v) {
    const double mean = v.mean();
    return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size()));
}

}  // namespace

double energy_ratio(const Eigen::VectorXd& prediction, const Eigen::VectorXd& ground_truth) {
    if (prediction.size() != ground_truth.size())
        throw InvalidArgument("energy_ratio: length mismatch");
    if (prediction.size() < 2) throw InvalidArgument("energy_ratio: need at least 2 samples");
    // A constant curve has zero variance by definition; the mean subtraction
    // alone can leave rounding dust, so detect constancy directly.
    if (ground_truth.maxCoeff() == ground_truth.minCoeff())
        throw UndefinedRatioError("energy_ratio: ground-truth curve has zero variance");
    if (prediction.maxCoeff() == prediction.minCoeff()) return 0.0;
    return stddev(prediction) / stddev(ground_truth);
}

std::vector<std::pair<int, int>> closure_events(const Eigen::VectorXd& curve, double tau,
                                                int min_run) {
    std::vector<std::pair<int, int>> events;
    const int n = static_cast<int>(curve.size());
    int start = -1;
    for (int t = 0; t <= n; ++t) {
        const bool below = t < n && curve[t] < tau;
        if (below && start < 0) start = t;
        if (!below && start >= 0) {
            if (t - start >= min_run) events.emplace_back(start, t);
            start = -1;
        }
    }
    return events;
}

ClosureMetrics closure_metrics(const Eigen::VectorXd& prediction,
                               const Eigen::VectorXd& ground_truth, double tau, int min_run) {
    if (prediction.size() != ground_truth.size())
        throw InvalidArgument("closure_metrics: length mismatch");
    const auto pred_events = closure_events(prediction, tau, min_run);
    const auto gt_events = closure_events(ground_truth, tau, min_run);

    auto overlaps = [](const std::pair<int, int>& a, const std::pair<int, int>& b) {
        return a.first < b.second && b.first < a.second;
    };
    auto hit_fraction = [&](const auto& events, const auto& against) {
        if (events.empty()) return 1.0;
        int hits = 0;
        for (const auto& e : events)
            for (const auto& o : against)
                if (overlaps(e, o)) {
                    ++hits;
                    break;
                }
        return static_cast<double>(hits) / static_cast<double>(events.size());
    };

    ClosureMetrics m;
    m.recall = hit_fraction(gt_events, pred_events);
    m.precision = hit_fraction(pred_events, gt_events);
    return m;
}

CurveTable infer_sequence(AvNet& net, const SynthDataset& dataset, int sequence, BatchMode mode) {
    if (sequence < 0 || sequence >= static_cast<int>(dataset.sequences.size()))
        throw InvalidArgument("infer_sequence: sequence index out of range");
    const SynthSequence& seq = dataset.sequences[static_cast<size_t>(sequence)];
    const bool causal = net.config().causal;
    const ContextMode context = causal ? ContextMode::Causal : ContextMode::NonCausal;
    const auto speech_idx = dataset.model.speech_indices();
    const auto nonspeech_idx = dataset.model.nonspeech_indices();
    const int k = dataset.model.coefficient_count();

    CurveTable table;
    const int t_count = seq.frames();
    table.pose.resize(t_count, 6);
    table.coeffs.resize(t_count, k);

    for (int t = 0; t < t_count; ++t) {
        VideoInput video = seq.images[static_cast<size_t>(t)];
        AudioWindow audio = stack_context(seq.mfb, t, context);
        if (mode == BatchMode::AudioOnly) video.pixels.setZero();
        if (mode == BatchMode::VideoOnly) audio.data.setZero();

        const NetOutput out = net.forward({{video, audio}}).front();
        Eigen::VectorXd merged(k);
        for (size_t i = 0; i < speech_idx.size(); ++i)
            merged[speech_idx[i]] = out.x_av[static_cast<Eigen::Index>(i)];
        for (size_t i = 0; i < nonspeech_idx.size(); ++i)
            merged[nonspeech_idx[i]] = out.x_v[static_cast<Eigen::Index>(i)];

        table.frame.push_back(t);
        table.converged.push_back(1);
        table.objective.push_back(0.0);
        table.pose.row(t) = out.pose.transpose();
        table.coeffs.row(t) = merged.cwiseMax(0.0).cwiseMin(1.0).transpose();
    }
    return table;
}

ModeReport aggregate_report(const std::vector<CurveTable>& predictions,
                            const std::vector<const SynthSequence*>& truth,
                            const BlendshapeModel& model) {
    if (predictions.empty() || predictions.size() != truth.size())
        throw InvalidArgument("aggregate_report: prediction/truth count mismatch");
    const int k = model.coefficient_count();
    const auto speech_idx = model.speech_indices();
    const auto nonspeech_idx = model.nonspeech_indices();

    Eigen::VectorXd sq_err = Eigen::VectorXd::Zero(k);
    long frames_total = 0;
    double pose_rot_err = 0.0, pose_trans_err = 0.0;
    Eigen::VectorXd ratio_num = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd ratio_den = Eigen::VectorXd::Zero(k);
    double recall_sum = 0.0, precision_sum = 0.0;

    for (size_t s = 0; s < predictions.size(); ++s) {
        const CurveTable& curves = predictions[s];
        const SynthSequence& seq = *truth[s];
        const int t_count = seq.frames();
        if (curves.frames() != t_count)
            throw InvalidArgument("aggregate_report: frame count mismatch");
        frames_total += t_count;

        for (int t = 0; t < t_count; ++t) {
            const Eigen::VectorXd err =
                curves.coeffs.row(t).transpose() - seq.coeffs.row(t).transpose();
            sq_err += err.cwiseProduct(err);
            pose_rot_err += (curves.pose.row(t).head<3>() - seq.pose.row(t).head<3>()).squaredNorm() / 3.0;
            pose_trans_err += (curves.pose.row(t).tail<3>() - seq.pose.row(t).tail<3>()).squaredNorm() / 3.0;
        }

        // Energy ratios pooled via per-sequence variances.
        for (int j = 0; j < k; ++j) {
            const Eigen::VectorXd pc = curves.coeffs.col(j);
            const Eigen::VectorXd gc = seq.coeffs.col(j);
            ratio_num[j] += (pc.array() - pc.mean()).square().sum();
            ratio_den[j] += (gc.array() - gc.mean()).square().sum();
        }

        const ClosureMetrics cm =
            closure_metrics(curves.coeffs.col(0), seq.coeffs.col(0), kClosureTau, kClosureMinRun);
        recall_sum += cm.recall;
        precision_sum += cm.precision;
    }

    const auto curve_count = static_cast<double>(predictions.size());
    ModeReport report;
    report.coefficient_mse = sq_err / static_cast<double>(frames_total);
    report.coefficient_energy_ratio.resize(k);
    for (int j = 0; j < k; ++j) {
        if (ratio_den[j] == 0.0)
            throw UndefinedRatioError("aggregate_report: ground-truth coefficient " +
                                      std::to_string(j) + " has zero variance");
        report.coefficient_energy_ratio[j] = std::sqrt(ratio_num[j] / ratio_den[j]);
    }
    report.closure_recall = recall_sum / curve_count;
    report.closure_precision = precision_sum / curve_count;

    double speech_sum = 0.0, nonspeech_sum = 0.0;
    for (int idx : speech_idx) speech_sum += report.coefficient_mse[idx];
    for (int idx : nonspeech_idx) nonspeech_sum += report.coefficient_mse[idx];
    report.speech_mse = speech_sum / static_cast<double>(speech_idx.size());
    report.nonspeech_mse =
        nonspeech_idx.empty() ? 0.0 : nonspeech_sum / static_cast<double>(nonspeech_idx.size());
    report.pose_rotation_mse = pose_rot_err / static_cast<double>(frames_total);
    report.pose_translation_mse = pose_trans_err / static_cast<double>(frames_total);
    return report;
}

ModeReport evaluate_net(AvNet& net, const SynthDataset& dataset, BatchMode mode,
                        int holdout_start) {
    const int n = static_cast<int>(dataset.sequences.size());
    if (holdout_start < 0 || holdout_start >= n)
        throw InvalidArgument("evaluate_net: no held-out sequences");

    std::vector<CurveTable> predictions;
    std::vector<const SynthSequence*> truth;
    for (int s = holdout_start; s < n; ++s) {
        predictions.push_back(infer_sequence(net, dataset, s, mode));
        truth.push_back(&dataset.sequences[static_cast<size_t>(s)]);
    }
    ModeReport report = aggregate_report(predictions, truth, dataset.model);
    report.mode = to_string(mode);
    return report;
}

EvalReport ablation_report(const std::vector<std::string>& checkpoint_paths,
                           const SynthDataset& dataset, const std::vector<BatchMode>& modes,
                           int holdout) {
    if (checkpoint_paths.empty()) throw InvalidArgument("ablation_report: no checkpoints");
    if (modes.empty()) throw InvalidArgument("ablation_report: no input modes");
    const int n = static_cast<int>(dataset.sequences.size());
    const int holdout_start = std::max(0, n - std::max(1, holdout));

    EvalReport report;
    for (const std::string& path : checkpoint_paths) {
        AvNet net = load_checkpoint(path);
        for (BatchMode mode : modes) {
            ModeReport row = evaluate_net(net, dataset, mode, holdout_start);
            row.checkpoint = path;
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

void write_eval_csv(const EvalReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write eval CSV " + path);
    if (report.rows.empty()) return;
    const int k = static_cast<int>(report.rows.front().coefficient_mse.size());
    out << "checkpoint,mode,speech_mse,nonspeech_mse,pose_rot_mse,pose_trans_mse,closure_recall,"
           "closure_precision";
    for (int j = 0; j < k; ++j) out << ",mse_x" << j;
    for (int j = 0; j < k; ++j) out << ",energy_ratio_x" << j;
    out << "\n";
    out.precision(12);
    for (const ModeReport& row : report.rows) {
        out << row.checkpoint << ',' << row.mode << ',' << row.speech_mse << ','
            << row.nonspeech_mse << ',' << row.pose_rotation_mse << ',' << row.pose_translation_mse
            << ',' << row.closure_recall << ',' << row.closure_precision;
        for (int j = 0; j < k; ++j) out << ',' << row.coefficient_mse[j];
        for (int j = 0; j < k; ++j) out << ',' << row.coefficient_energy_ratio[j];
        out << "\n";
    }
}

std::string eval_summary(const EvalReport& report) {
    std::vector<const ModeReport*> rows;
    for (const ModeReport& row : report.rows) rows.push_back(&row);
    std::sort(rows.begin(), rows.end(), [](const ModeReport* a, const ModeReport* b) {
        return a->speech_mse < b->speech_mse;
    });
    std::ostringstream out;
    out.precision(6);
    out << "systems ordered by speech-coefficient MSE (best first)\n";
    for (const ModeReport* row : rows)
        out << "  " << row->checkpoint << " [" << row->mode << "] speech_mse=" << row->speech_mse
            << " jaw_energy_ratio=" << row->coefficient_energy_ratio[0]
            << " closure_recall=" << row->closure_recall << "\n";
    return out.str();
}

}  // namespace avbf
