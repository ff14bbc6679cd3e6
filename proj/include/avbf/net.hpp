#pragma once

#include <Eigen/Core>

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "avbf/features.hpp"
#include "avbf/geometry.hpp"
#include "avbf/tensor.hpp"

namespace avbf {

/// Architecture description. Channel counts, embedding width and image
/// resolution are stored at paper scale; `scale_factor` divides them
/// uniformly for desk-scale runs (strides and kernel sizes are kept).
struct NetConfig {
    std::vector<int> video_channels = {64, 128, 128, 256, 256, 256};
    std::vector<int> video_strides = {2, 2, 2, 2, 2, 1};
    std::vector<int> audio_channels = {32, 64, 64, 64};
    int embedding_dim = 256;
    bool causal = false;
    int image_resolution = 128;
    int scale_factor = 1;
    int k_speech = 6;
    int k_nonspeech = 4;
    int landmark_count = 16;

    int scaled_channels(int c) const { return std::max(1, c / scale_factor); }
    int resolution() const { return std::max(4, image_resolution / scale_factor); }
    int scaled_embedding() const { return std::max(1, embedding_dim / scale_factor); }
    int audio_window() const { return causal ? kCausalWindow : kNonCausalWindow; }
    /// Audio conv strides: the first layer drops from 2x2 to 1x1 in the
    /// causal variant, the rest stay 1x1.
    int audio_stride(int layer) const { return layer == 0 ? (causal ? 1 : 2) : 1; }

    void validate() const;
};

struct ConvPlan {
    int in_h, in_w, in_c;
    int filters;
    int stride;
    int out_h, out_w;
};

/// Conv layers actually applied at the configured resolution: layers are
/// taken in order while the 3x3 kernel still fits; at paper scale all six
/// video layers apply and end at 1x1x256.
std::vector<ConvPlan> plan_video_stack(const NetConfig& config);
std::vector<ConvPlan> plan_audio_stack(const NetConfig& config);

int video_embedding_dim(const NetConfig& config);  // flatten of the last video conv
int audio_embedding_dim(const NetConfig& config);  // dense layer width

struct NetOutput {
    Eigen::VectorXd x_av;               // speech coefficients
    Eigen::VectorXd x_v;                // non-speech coefficients
    Eigen::Matrix<double, 6, 1> pose;   // rotation xyz, translation xyz
};

/// The audiovisual regression network: video conv stack and audio conv
/// stack + dense (no activation), concatenation fusion into the speech
/// head, and video-only non-speech and pose heads.
class AvNet {
public:
    struct DenseParams {
        net::Tensor w, b;
    };
    struct ConvParams {
        net::Tensor w, b;  // w: [kh,kw,C,F], b: [F]
    };

    static AvNet init(const NetConfig& config, std::uint64_t seed);

    const NetConfig& config() const { return config_; }

    /// Stable-ordered (name, tensor) view used by the optimizer, the
    /// checkpoint writerและ the gradient checker.
    std::vector<std::pair<std::string, net::Tensor*>> named_parameters();

    /// Parameter leaves bound once per tape and reused across samples.
    struct Bound {
        std::vector<net::Tape::NodeId> video_w, video_b, audio_w, audio_b;
        net::Tape::NodeId audio_dense_w, audio_dense_b;
        net::Tape::NodeId fuse_w, fuse_b, xv_w, xv_b, pose_w, pose_b;
    };
    Bound bind(net::Tape& tape);

    struct SampleIds {
        net::Tape::NodeId e_v, e_a, x_av, x_v, pose;
    };
    struct ForwardTrace {
        std::vector<std::vector<int>> video_shapes;
        std::vector<std::vector<int>> audio_shapes;
    };

    /// One sample through the whole architecture. Inputs are validated
    /// against the config (resolution, window width vs causal flag).
    SampleIds forward_sample(net::Tape& tape, const Bound& bound, const VideoInput& video,
                             const AudioWindow& audio, ForwardTrace* trace = nullptr) const;

    /// Batched inference convenience; per-sample independent by construction.
    std::vector<NetOutput> forward(const std::vector<std::pair<VideoInput, AudioWindow>>& batch);

    void zero_grads();

private:
    NetConfig config_;
    std::vector<ConvParams> video_conv_;
    std::vector<ConvParams> audio_conv_;
    DenseParams audio_dense_;
    DenseParams fuse_;
    DenseParams xv_head_;
    DenseParams pose_head_;
};

/// Checkpoint container: magic "AVBF", version, config echo (JSON), then
/// named tensors (name length, name, dtype code, rank, extents,
/// little-endian payload).
void save_checkpoint(AvNet& net, const std::string& path);
AvNet load_checkpoint(const std::string& path);

std::string net_config_to_json(const NetConfig& config);
NetConfig net_config_from_json(const std::string& text);

}  // namespace avbf
