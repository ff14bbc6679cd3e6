#pragma once

#include <Eigen/Core>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "avbf/net.hpp"
#include "avbf/rng.hpp"
#include "avbf/synth.hpp"

namespace avbf {

/// Per-batch modality sampling probabilities. p_audio_drop is the chance a
/// batch becomes video-only, p_video_drop the chance it becomes audio-only;
/// the remainder stays audiovisual.
struct DropoutPolicy {
    double p_audio_drop = 0.0;
    double p_video_drop = 0.0;

    void validate() const;
};

enum class BatchMode { AudioVisual, VideoOnly, AudioOnly };

const char* to_string(BatchMode mode);
BatchMode batch_mode_from_string(const std::string& name);

struct LossWeights {
    double abs_blend = 1.0;
    double pose_rot_abs = 1e-5;
    double pose_trans_abs = 1e-5;
    double temp_blend = 20.0;
    double temp_rot = 10.0;
    double temp_trans = 0.001;
    double landmark = 5.0;

    void validate() const;
};

/// One training sample: consecutive frames (t-1, t) from one sequence, so
/// shuffling samples never breaks temporal adjacency and both frames share
/// a batch's dropout fate.
struct SequenceSample {
    VideoInput video_t, video_tm1;
    AudioWindow audio_t, audio_tm1;
    Eigen::VectorXd xav_t, xav_tm1;
    Eigen::VectorXd xv_t, xv_tm1;
    Eigen::Matrix<double, 6, 1> pose_t, pose_tm1;
    Eigen::MatrixX2d landmarks_t;  // J x 2 target pixels
    int sequence_id = 0;
    int frame = 0;
};

/// Categorical draw: VideoOnly with p_audio_drop, AudioOnly with
/// p_video_drop, AudioVisual otherwise. One uniform consumed per call.
BatchMode sample_modality_mode(const DropoutPolicy& policy, Rng& rng);

/// Zeroes the dropped modality in place, for frames t and t-1 of every
/// sample (joint dropout).
void apply_modality_dropout(std::vector<SequenceSample>& batch, BatchMode mode);

/// Raw per-term values (batch means). l1/l2: speech absolute/temporal;
/// l3/l4: non-speech absolute/temporal; l6: landmark reprojection. l5 is
/// the weighted pose aggregate (rotation and translation carry separate
/// absolute and temporal weights, so a single raw MSE cannot represent
/// it). total is the fully weighted objective.
struct LossBreakdown {
    double l1 = 0.0, l2 = 0.0, l3 = 0.0, l4 = 0.0, l5 = 0.0, l6 = 0.0;
    double total = 0.0;
    int l6_skipped = 0;  // samples dropped from l6 by behind-camera landmarks

    bool finite() const;
    const char* first_non_finite_term() const;
};

/// Builds the six-term masked loss on the tape. In AudioOnly mode the terms
/// 3-6 are not recorded at all, so they are exactly zero and contribute no
/// gradients. Returns the breakdown and stores the total's node id.
LossBreakdown build_losses(net::Tape& tape, AvNet& net, const AvNet::Bound& bound,
                           const std::vector<SequenceSample>& batch, BatchMode mode,
                           const LossWeights& weights, const BlendshapeModel& model,
                           const Camera& camera, net::Tape::NodeId* total_node);

/// Evaluation-only convenience (fresh tape, no backward).
LossBreakdown compute_losses(AvNet& net, const std::vector<SequenceSample>& batch, BatchMode mode,
                             const LossWeights& weights, const BlendshapeModel& model,
                             const Camera& camera);

/// Adam with bias correction; one moment pair per parameter tensor.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long step = 0;
};

void adam_step(std::vector<std::pair<std::string, net::Tensor*>>& params, AdamState& state,
               double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 32;
    int iterations = 2000;
    std::uint64_t seed = 1;
    int holdout_sequences = 2;  // kept out of training, used by evaluation
    DropoutPolicy dropout;
    LossWeights weights;
    NetConfig net;

    void validate() const;
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);

/// Builds the (t-1, t) sample for a sequence frame; audio windows follow
/// the net's causal flag.
SequenceSample make_sample(const SynthDataset& dataset, int sequence, int frame, bool causal);

/// Deterministic training loop. RNG order per iteration: one mode draw,
/// then batch_size (sequence, frame) index pairs. Metrics CSV rows
/// `iter,mode,L1,L2,L3,L4,L5,L6,total` go to `metrics` when non-null.
/// Throws NonFiniteError naming the iteration and term if the loss leaves
/// the finite range.
AvNet train(const TrainConfig& config, const SynthDataset& dataset, std::ostream* metrics);

}  // namespace avbf
