#include "avbf/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <ostream>

namespace avbf {

using net::Tape;
using nlohmann::json;

void DropoutPolicy::validate() const {
    if (p_audio_drop < 0.0 || p_video_drop < 0.0 || p_audio_drop + p_video_drop > 1.0)
        throw InvalidArgument("dropout policy: probabilities must be nonnegative and sum to <= 1");
}

const char* to_string(BatchMode mode) {
    switch (mode) {
        case BatchMode::AudioVisual: return "av";
        case BatchMode::VideoOnly: return "video";
        case BatchMode::AudioOnly: return "audio";
    }
    return "?";
}

BatchMode batch_mode_from_string(const std::string& name) {
    if (name == "av") return BatchMode::AudioVisual;
    if (name == "video") return BatchMode::VideoOnly;
    if (name == "audio") return BatchMode::AudioOnly;
    throw InvalidArgument("unknown input mode '" + name + "' (expected av|video|audio)");
}

void LossWeights::validate() const {
    for (double w : {abs_blend, pose_rot_abs, pose_trans_abs, temp_blend, temp_rot, temp_trans,
                     landmark})
        if (w < 0.0 || !std::isfinite(w)) throw InvalidArgument("loss weights must be finite and nonnegative");
}

BatchMode sample_modality_mode(const DropoutPolicy& policy, Rng& rng) {
    policy.validate();
    const double u = rng.uniform();
    if (u < policy.p_audio_drop) return BatchMode::VideoOnly;
    if (u < policy.p_audio_drop + policy.p_video_drop) return BatchMode::AudioOnly;
    return BatchMode::AudioVisual;
}

void apply_modality_dropout(std::vector<SequenceSample>& batch, BatchMode mode) {
    if (mode == BatchMode::AudioVisual) return;
    for (SequenceSample& sample : batch) {
        if (mode == BatchMode::AudioOnly) {
            sample.video_t.pixels.setZero();
            sample.video_tm1.pixels.setZero();
        } else {
            sample.audio_t.data.setZero();
            sample.audio_tm1.data.setZero();
        }
    }
}

bool LossBreakdown::finite() const {
    for (double v : {l1, l2, l3, l4, l5, l6, total})
        if (!std::isfinite(v)) return false;
    return true;
}

const char* LossBreakdown::first_non_finite_term() const {
    if (!std::isfinite(l1)) return "L1";
    if (!std::isfinite(l2)) return "L2";
    if (!std::isfinite(l3)) return "L3";
    if (!std::isfinite(l4)) return "L4";
    if (!std::isfinite(l5)) return "L5";
    if (!std::isfinite(l6)) return "L6";
    return "total";
}

namespace {

/// Differentiable landmark positions: project(apply_pose(mesh(x), pose_gt))
/// at the model's landmark vertices. Only the coefficients are
/// differentiated; the pose is the ground-truth constant, which isolates
/// coefficient error from pose error in loss 6.
Tape::NodeId landmark_projection(Tape& tape, Tape::NodeId coeffs, const BlendshapeModel& model,
                                 const Eigen::Matrix<double, 6, 1>& pose_gt, const Camera& camera) {
    const int k = model.coefficient_count();
    const int j_count = model.landmark_count();
    HeadPose pose;
    pose.rotation = pose_gt.head<3>();
    pose.translation = pose_gt.tail<3>();
    const Eigen::Matrix3d rot = pose.rotation_matrix();

    const auto xv = tape.value(coeffs);
    Eigen::Map<const Eigen::VectorXd> x(xv.data(), k);

    std::vector<double> out(static_cast<size_t>(j_count) * 2);
    // d(uv_j)/dx = J_project(p_j) * R * B_j, with B_j the 3xK delta block.
    Eigen::MatrixXd jacobian(2 * j_count, k);
    for (int j = 0; j < j_count; ++j) {
        const int vi = model.landmark_indices[static_cast<size_t>(j)];
        const Eigen::Matrix<double, 3, Eigen::Dynamic> block = model.deltas.middleRows(3 * vi, 3);
        const Eigen::Vector3d neutral = model.neutral.row(vi);
        const Eigen::Vector3d p = rot * (neutral + block * x) + pose.translation;
        const Eigen::Vector2d uv = project(p, camera);  // throws BehindCameraError
        out[static_cast<size_t>(2 * j)] = uv[0];
        out[static_cast<size_t>(2 * j + 1)] = uv[1];
        jacobian.middleRows(2 * j, 2) = project_jacobian(p, camera) * rot * block;
    }

    return tape.custom(
        {j_count, 2}, std::move(out), {coeffs},
        [jacobian, j_count, k](std::span<const double> dout,
                               const std::vector<std::span<double>>& parent_grads) {
            Eigen::Map<const Eigen::VectorXd> upstream(dout.data(), 2 * j_count);
            Eigen::VectorXd dx = jacobian.transpose() * upstream;
            for (int i = 0; i < k; ++i) parent_grads[0][static_cast<size_t>(i)] += dx[i];
        });
}

Tape::NodeId mean_of(Tape& tape, const std::vector<Tape::NodeId>& terms) {
    std::vector<std::pair<Tape::NodeId, double>> weighted;
    weighted.reserve(terms.size());
    const double w = 1.0 / static_cast<double>(terms.size());
    for (Tape::NodeId id : terms) weighted.emplace_back(id, w);
    return tape.weighted_sum(weighted);
}

}  // namespace

LossBreakdown build_losses(Tape& tape, AvNet& net, const AvNet::Bound& bound,
                           const std::vector<SequenceSample>& batch, BatchMode mode,
                           const LossWeights& weights, const BlendshapeModel& model,
                           const Camera& camera, Tape::NodeId* total_node) {
    if (batch.empty()) throw InvalidArgument("build_losses: empty batch");
    weights.validate();
    const bool video_active = mode != BatchMode::AudioOnly;

    std::vector<Tape::NodeId> l1_terms, l2_terms, l3_terms, l4_terms;
    std::vector<Tape::NodeId> rot_abs_terms, trans_abs_terms, rot_temp_terms, trans_temp_terms;
    std::vector<Tape::NodeId> l6_terms;
    int l6_skipped = 0;

    const auto speech_idx = model.speech_indices();
    const auto nonspeech_idx = model.nonspeech_indices();

    for (const SequenceSample& sample : batch) {
        const auto out_t = net.forward_sample(tape, bound, sample.video_t, sample.audio_t);
        const auto out_tm1 = net.forward_sample(tape, bound, sample.video_tm1, sample.audio_tm1);

        l1_terms.push_back(tape.mse(out_t.x_av, std::span<const double>(sample.xav_t.data(),
                                                                        sample.xav_t.size())));
        const Eigen::VectorXd dxav = sample.xav_t - sample.xav_tm1;
        l2_terms.push_back(tape.mse(tape.sub(out_t.x_av, out_tm1.x_av),
                                    std::span<const double>(dxav.data(), dxav.size())));

        if (!video_active) continue;  // losses 3-6 masked: never recorded

        l3_terms.push_back(
            tape.mse(out_t.x_v, std::span<const double>(sample.xv_t.data(), sample.xv_t.size())));
        const Eigen::VectorXd dxv = sample.xv_t - sample.xv_tm1;
        l4_terms.push_back(tape.mse(tape.sub(out_t.x_v, out_tm1.x_v),
                                    std::span<const double>(dxv.data(), dxv.size())));

        const Tape::NodeId rot_t = tape.slice(out_t.pose, 0, 3);
        const Tape::NodeId trans_t = tape.slice(out_t.pose, 3, 3);
        rot_abs_terms.push_back(
            tape.mse(rot_t, std::span<const double>(sample.pose_t.data(), 3)));
        trans_abs_terms.push_back(
            tape.mse(trans_t, std::span<const double>(sample.pose_t.data() + 3, 3)));

        const Eigen::Matrix<double, 6, 1> dpose = sample.pose_t - sample.pose_tm1;
        rot_temp_terms.push_back(
            tape.mse(tape.sub(rot_t, tape.slice(out_tm1.pose, 0, 3)),
                     std::span<const double>(dpose.data(), 3)));
        trans_temp_terms.push_back(
            tape.mse(tape.sub(trans_t, tape.slice(out_tm1.pose, 3, 3)),
                     std::span<const double>(dpose.data() + 3, 3)));

        try {
            const Tape::NodeId merged =
                tape.scatter_merge(out_t.x_av, out_t.x_v, speech_idx, nonspeech_idx);
            const Tape::NodeId uv = landmark_projection(tape, merged, model, sample.pose_t, camera);
            std::vector<double> target(static_cast<size_t>(sample.landmarks_t.rows()) * 2);
            for (Eigen::Index j = 0; j < sample.landmarks_t.rows(); ++j) {
                target[static_cast<size_t>(2 * j)] = sample.landmarks_t(j, 0);
                target[static_cast<size_t>(2 * j + 1)] = sample.landmarks_t(j, 1);
            }
            l6_terms.push_back(tape.mse(uv, target));
        } catch (const BehindCameraError&) {
            // Sample excluded from loss 6; training must not abort on it.
            ++l6_skipped;
        }
    }

    LossBreakdown breakdown;
    breakdown.l6_skipped = l6_skipped;

    const Tape::NodeId l1 = mean_of(tape, l1_terms);
    const Tape::NodeId l2 = mean_of(tape, l2_terms);
    breakdown.l1 = tape.scalar(l1);
    breakdown.l2 = tape.scalar(l2);

    std::vector<std::pair<Tape::NodeId, double>> total_terms = {{l1, weights.abs_blend},
                                                                {l2, weights.temp_blend}};

    if (video_active) {
        const Tape::NodeId l3 = mean_of(tape, l3_terms);
        const Tape::NodeId l4 = mean_of(tape, l4_terms);
        const Tape::NodeId l5 = tape.weighted_sum({{mean_of(tape, rot_abs_terms), weights.pose_rot_abs},
                                                   {mean_of(tape, trans_abs_terms), weights.pose_trans_abs},
                                                   {mean_of(tape, rot_temp_terms), weights.temp_rot},
                                                   {mean_of(tape, trans_temp_terms), weights.temp_trans}});
        breakdown.l3 = tape.scalar(l3);
        breakdown.l4 = tape.scalar(l4);
        breakdown.l5 = tape.scalar(l5);
        total_terms.emplace_back(l3, weights.abs_blend);
        total_terms.emplace_back(l4, weights.temp_blend);
        total_terms.emplace_back(l5, 1.0);
        if (!l6_terms.empty()) {
            const Tape::NodeId l6 = mean_of(tape, l6_terms);
            breakdown.l6 = tape.scalar(l6);
            total_terms.emplace_back(l6, weights.landmark);
        }
    }

    const Tape::NodeId total = tape.weighted_sum(total_terms);
    breakdown.total = tape.scalar(total);
    if (total_node) *total_node = total;
    return breakdown;
}

LossBreakdown compute_losses(AvNet& net, const std::vector<SequenceSample>& batch, BatchMode mode,
                             const LossWeights& weights, const BlendshapeModel& model,
                             const Camera& camera) {
    Tape tape;
    const AvNet::Bound bound = net.bind(tape);
    return build_losses(tape, net, bound, batch, mode, weights, model, camera, nullptr);
}

void adam_step(std::vector<std::pair<std::string, net::Tensor*>>& params, AdamState& state,
               double learning_rate, double beta1, double beta2, double eps) {
    if (state.m.empty()) {
        for (auto& [name, t] : params) {
            state.m.emplace_back(t->v.size(), 0.0);
            state.v.emplace_back(t->v.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw InvalidArgument("adam: state/parameter count mismatch");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));

    for (size_t pi = 0; pi < params.size(); ++pi) {
        net::Tensor* t = params[pi].second;
        t->ensure_grad();
        if (state.m[pi].size() != t->v.size()) throw InvalidArgument("adam: shape mismatch");
        for (size_t i = 0; i < t->v.size(); ++i) {
            const double g = t->g[i];
            state.m[pi][i] = beta1 * state.m[pi][i] + (1.0 - beta1) * g;
            state.v[pi][i] = beta2 * state.v[pi][i] + (1.0 - beta2) * g * g;
            const double mhat = state.m[pi][i] / bc1;
            const double vhat = state.v[pi][i] / bc2;
            t->v[i] -= learning_rate * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0)) throw InvalidArgument("train config: bad learning rate");
    if (batch_size < 1) throw InvalidArgument("train config: batch_size must be >= 1");
    if (iterations < 0) throw InvalidArgument("train config: negative iteration count");
    if (holdout_sequences < 0) throw InvalidArgument("train config: negative holdout");
    dropout.validate();
    weights.validate();
    net.validate();
}

std::string train_config_to_json(const TrainConfig& c) {
    json doc;
    doc["learning_rate"] = c.learning_rate;
    doc["batch_size"] = c.batch_size;
    doc["iterations"] = c.iterations;
    doc["seed"] = c.seed;
    doc["holdout_sequences"] = c.holdout_sequences;
    doc["dropout"] = {{"p_audio_drop", c.dropout.p_audio_drop},
                      {"p_video_drop", c.dropout.p_video_drop}};
    doc["weights"] = {{"abs_blend", c.weights.abs_blend},
                      {"pose_rot_abs", c.weights.pose_rot_abs},
                      {"pose_trans_abs", c.weights.pose_trans_abs},
                      {"temp_blend", c.weights.temp_blend},
                      {"temp_rot", c.weights.temp_rot},
                      {"temp_trans", c.weights.temp_trans},
                      {"landmark", c.weights.landmark}};
    doc["net"] = json::parse(net_config_to_json(c.net));
    return doc.dump(1);
}

TrainConfig train_config_from_json(const std::string& text) {
    TrainConfig c;
    json doc;
    try {
        doc = json::parse(text);
        if (doc.contains("learning_rate")) c.learning_rate = doc["learning_rate"].get<double>();
        if (doc.contains("batch_size")) c.batch_size = doc["batch_size"].get<int>();
        if (doc.contains("iterations")) c.iterations = doc["iterations"].get<int>();
        if (doc.contains("seed")) c.seed = doc["seed"].get<std::uint64_t>();
        if (doc.contains("holdout_sequences")) c.holdout_sequences = doc["holdout_sequences"].get<int>();
        if (doc.contains("dropout")) {
            const auto& d = doc["dropout"];
            if (d.contains("p_audio_drop")) c.dropout.p_audio_drop = d["p_audio_drop"].get<double>();
            if (d.contains("p_video_drop")) c.dropout.p_video_drop = d["p_video_drop"].get<double>();
        }
        if (doc.contains("weights")) {
            const auto& w = doc["weights"];
            if (w.contains("abs_blend")) c.weights.abs_blend = w["abs_blend"].get<double>();
            if (w.contains("pose_rot_abs")) c.weights.pose_rot_abs = w["pose_rot_abs"].get<double>();
            if (w.contains("pose_trans_abs")) c.weights.pose_trans_abs = w["pose_trans_abs"].get<double>();
            if (w.contains("temp_blend")) c.weights.temp_blend = w["temp_blend"].get<double>();
            if (w.contains("temp_rot")) c.weights.temp_rot = w["temp_rot"].get<double>();
            if (w.contains("temp_trans")) c.weights.temp_trans = w["temp_trans"].get<double>();
            if (w.contains("landmark")) c.weights.landmark = w["landmark"].get<double>();
        }
        if (doc.contains("net")) c.net = net_config_from_json(doc["net"].dump());
    } catch (const json::exception& e) {
        throw BadFormatError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

SequenceSample make_sample(const SynthDataset& dataset, int sequence, int frame, bool causal) {
    if (sequence < 0 || sequence >= static_cast<int>(dataset.sequences.size()))
        throw InvalidArgument("make_sample: sequence index out of range");
    const SynthSequence& seq = dataset.sequences[static_cast<size_t>(sequence)];
    if (frame < 1 || frame >= seq.frames())
        throw InvalidArgument("make_sample: frame must have a predecessor");

    const ContextMode mode = causal ? ContextMode::Causal : ContextMode::NonCausal;
    const auto speech_idx = dataset.model.speech_indices();
    const auto nonspeech_idx = dataset.model.nonspeech_indices();

    SequenceSample s;
    s.sequence_id = sequence;
    s.frame = frame;
    s.video_t = seq.images[static_cast<size_t>(frame)];
    s.video_tm1 = seq.images[static_cast<size_t>(frame - 1)];
    s.audio_t = stack_context(seq.mfb, frame, mode);
    s.audio_tm1 = stack_context(seq.mfb, frame - 1, mode);

    auto split = [&](int t, Eigen::VectorXd& xav, Eigen::VectorXd& xv) {
        xav.resize(static_cast<Eigen::Index>(speech_idx.size()));
        xv.resize(static_cast<Eigen::Index>(nonspeech_idx.size()));
        for (size_t i = 0; i < speech_idx.size(); ++i)
            xav[static_cast<Eigen::Index>(i)] = seq.coeffs(t, speech_idx[i]);
        for (size_t i = 0; i < nonspeech_idx.size(); ++i)
            xv[static_cast<Eigen::Index>(i)] = seq.coeffs(t, nonspeech_idx[i]);
    };
    split(frame, s.xav_t, s.xv_t);
    split(frame - 1, s.xav_tm1, s.xv_tm1);
    s.pose_t = seq.pose.row(frame).transpose();
    s.pose_tm1 = seq.pose.row(frame - 1).transpose();
    s.landmarks_t = seq.landmark_uv[static_cast<size_t>(frame)];
    return s;
}

AvNet train(const TrainConfig& config, const SynthDataset& dataset, std::ostream* metrics) {
    config.validate();
    const int train_sequences =
        static_cast<int>(dataset.sequences.size()) - config.holdout_sequences;
    if (train_sequences < 1) throw InvalidArgument("train: no sequences left after holdout");
    for (int s = 0; s < train_sequences; ++s)
        if (dataset.sequences[static_cast<size_t>(s)].frames() < 2)
            throw InvalidArgument("train: sequences must have at least 2 frames");

    AvNet net = AvNet::init(config.net, Rng::derive_seed(config.seed, 0xA11));
    auto params = net.named_parameters();
    AdamState adam;
    Rng rng(Rng::derive_seed(config.seed, 0x7141));

    if (metrics) {
        (*metrics) << "iter,mode,L1,L2,L3,L4,L5,L6,total\n";
        metrics->precision(17);
    }

    for (int iter = 0; iter < config.iterations; ++iter) {
        const BatchMode mode = sample_modality_mode(config.dropout, rng);
        std::vector<SequenceSample> batch;
        batch.reserve(static_cast<size_t>(config.batch_size));
        for (int b = 0; b < config.batch_size; ++b) {
            const int s = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(train_sequences)));
            const int frames = dataset.sequences[static_cast<size_t>(s)].frames();
            const int t = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(frames - 1)));
            batch.push_back(make_sample(dataset, s, t, config.net.causal));
        }
        apply_modality_dropout(batch, mode);

        Tape tape;
        const AvNet::Bound bound = net.bind(tape);
        Tape::NodeId total = -1;
        const LossBreakdown loss = build_losses(tape, net, bound, batch, mode, config.weights,
                                                dataset.model, dataset.camera, &total);
        if (!loss.finite())
            throw NonFiniteError("non-finite loss at iteration " + std::to_string(iter) +
                                 " in term " + loss.first_non_finite_term());

        net.zero_grads();
        tape.backward(total);
        adam_step(params, adam, config.learning_rate);

        if (metrics)
            (*metrics) << iter << ',' << to_string(mode) << ',' << loss.l1 << ',' << loss.l2 << ','
                       << loss.l3 << ',' << loss.l4 << ',' << loss.l5 << ',' << loss.l6 << ','
                       << loss.total << "\n";
    }
    return net;
}

}  // namespace avbf
