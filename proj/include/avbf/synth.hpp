#pragma once

#include <Eigen/Core>

#include <string>
#include <utility>
#include <vector>

#include "avbf/features.hpp"
#include "avbf/geometry.hpp"
#include "avbf/rng.hpp"
#include "avbf/solver.hpp"

namespace avbf {

/// Configuration of the synthetic corpus generator.
struct SynthConfig {
    std::uint64_t seed = 1;
    int vertices = 200;        // V
    int k_speech = 6;
    int k_nonspeech = 4;
    int landmarks = 16;        // J
    int frames = 300;          // T per sequence
    int n_sequences = 10;
    double closure_rate = 4.0;    // expected lip closures per 100 frames
    double av_redundancy = 0.8;   // rho: fraction of speech variance carried by audio
    double sigma_depth = 0.0;
    double sigma_landmark = 0.0;  // pixels
    double sigma_audio = 0.1;
    int audio_lag = 0;            // MFB at t reflects articulation at t - audio_lag
    int image_resolution = 32;
    double depth_keep_fraction = 1.0;  // <1 subsamples the depth cloud per frame

    int total_coefficients() const { return k_speech + k_nonspeech; }
    void validate() const;
};

std::string synth_config_to_json(const SynthConfig& config);
SynthConfig synth_config_from_json(const std::string& text);

/// Camera used for every synthetic sequence; derived from the resolution.
Camera synth_camera(const SynthConfig& config);

/// Head proxy: ellipsoid point cloud with localized Gaussian-bump
/// blendshapes. Coefficient 0 is jaw-open (vertical displacement field at
/// the bottom-front of the head); speech bumps sit near the mouth,
/// non-speech bumps near the brow.
BlendshapeModel generate_model(const SynthConfig& config);

/// Neutral per-vertex normals of the generated head (outward ellipsoid
/// normals); rendering rotates these by the frame pose.
Eigen::MatrixX3d model_neutral_normals(const SynthConfig& config);

struct Trajectory {
    Eigen::MatrixXd coeffs;  // T x K, all entries in [0,1]
    Eigen::MatrixXd pose;    // T x 6 (axis-angle xyz, translation xyz)
    std::vector<std::pair<int, int>> closure_events;  // [start, end) frames
    std::vector<bool> closure_active;                 // per frame
};

/// Smoothed filtered noise per coefficient; jaw-open forced to zero during
/// closure events (runs of 3-8 frames at the configured rate). Pose is a
/// slow random walk about the head center, rotation bounded by 0.3 rad.
Trajectory generate_trajectory(const SynthConfig& config, Rng& rng);

struct RenderedFrame {
    DepthObservation depth;
    LandmarkObservation landmarks;
    Eigen::MatrixX2d landmark_uv_raw;  // before the visibility bounds check
    VideoInput image;
};

RenderedFrame render_observations(const BlendshapeModel& model,
                                  const Eigen::MatrixX3d& neutral_normals,
                                  const Coefficients& x, const HeadPose& pose,
                                  const SynthConfig& config, const Camera& camera, Rng& rng);

/// MFB_t = rho * tanh(A (x_speech(src) - 0.5)) + (1 - rho) * nuisance +
/// sigma_a * white, src = t - audio_lag. Closure frames get a -2.0 shift on
/// every band (closed lips carry no speech energy). A is fixed from the
/// config seed, so equal configs give bit-identical streams.
std::vector<MfbFrame> synth_audio(const Eigen::MatrixXd& x_speech,
                                  const std::vector<bool>& closure_active,
                                  const SynthConfig& config, Rng& rng);

Eigen::MatrixXd audio_mixing_matrix(const SynthConfig& config);

struct SynthSequence {
    Eigen::MatrixXd coeffs;  // T x K ground truth
    Eigen::MatrixXd pose;    // T x 6 ground truth
    std::vector<DepthObservation> depth;
    std::vector<LandmarkObservation> landmarks;
    std::vector<Eigen::MatrixX2d> landmark_uv;  // raw target positions
    std::vector<VideoInput> images;
    std::vector<MfbFrame> mfb;
    std::vector<std::pair<int, int>> closure_events;

    int frames() const { return static_cast<int>(coeffs.rows()); }
};

/// Sequence i uses the RNG stream derive_seed(config.seed, 100 + i); the
/// model and the audio mixing matrix come from the base seed, shared by all
/// sequences.
SynthSequence generate_sequence(const SynthConfig& config, const BlendshapeModel& model,
                                const Camera& camera, int sequence_index);

struct SynthDataset {
    SynthConfig config;
    BlendshapeModel model;
    Camera camera;
    std::vector<SynthSequence> sequences;
};

SynthDataset generate_dataset(const SynthConfig& config);

/// Writes manifest.json, model.json and seq_%04d/{coeffs,pose,depth,
/// landmarks,images,mfb}.bin. Deterministic: equal configs produce
/// byte-identical directories.
void write_dataset(const SynthDataset& dataset, const std::string& dir);

SynthDataset load_dataset(const std::string& dir);

}  // namespace avbf
