#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "avbf/error.hpp"

namespace avbf {

inline constexpr int kMfbBands = 40;
inline constexpr int kNonCausalWindow = 21;  // 10 past + current + 10 future
inline constexpr int kCausalWindow = 11;     // 10 past + current

enum class ContextMode { NonCausal, Causal };

inline int context_width(ContextMode mode) {
    return mode == ContextMode::NonCausal ? kNonCausalWindow : kCausalWindow;
}

/// One frame of log Mel filterbank energies.
struct MfbFrame {
    Eigen::Matrix<double, kMfbBands, 1> values;
    int timestamp = 0;
};

/// bands x width matrix of stacked MFB frames, column order oldest..newest.
struct AudioWindow {
    Eigen::MatrixXd data;  // kMfbBands x context_width(mode)
    ContextMode mode = ContextMode::NonCausal;
};

/// Grayscale face crop, values in [0,1], square.
struct VideoInput {
    Eigen::MatrixXd pixels;  // resolution x resolution, row-major semantics (row = y)
};

struct MelConfig {
    int sample_rate = 16000;
    int frame_length = 400;  // 25 ms at 16 kHz
    int frame_hop = 160;     // 10 ms
    int num_filters = kMfbBands;
    double low_hz = 0.0;
    double high_hz = 8000.0;
    double log_floor = 1e-10;
};

/// Triangular Mel filterbank over an FFT power spectrum.
///
/// Filters are placed on the HTK Mel scale (2595 log10(1 + f/700)); matrix
/// construction is deterministic from the config alone.
class MelFilterbank {
public:
    explicit MelFilterbank(const MelConfig& config = MelConfig{});

    /// One 25 ms frame of PCM samples -> 40 log filterbank energies.
    /// Throws InvalidArgument when the sample count is not config.frame_length.
    MfbFrame apply(const std::vector<double>& samples, int timestamp = 0) const;

    /// Whole-signal convenience: frames of length frame_length every frame_hop
    /// samples; the trailing partial frame is dropped.
    std::vector<MfbFrame> process(const std::vector<double>& samples) const;

    /// Center frequency (Hz) of filter `index`.
    double filter_center_hz(int index) const;

    const MelConfig& config() const { return config_; }
    int fft_size() const { return fft_size_; }

private:
    MelConfig config_;
    int fft_size_;
    Eigen::MatrixXd weights_;          // num_filters x (fft_size/2 + 1)
    std::vector<double> centers_hz_;
    std::vector<double> window_;       // Hann, frame_length
};

/// Stacks MFB frames around index t. Out-of-range indices replicate the
/// nearest valid frame. Throws InvalidArgument on an empty stream.
AudioWindow stack_context(const std::vector<MfbFrame>& stream, int t, ContextMode mode);

/// Maps 8-bit pixels to [0,1]. The buffer is row-major height x width and
/// must be square with the requested resolution.
VideoInput normalize_image(const std::vector<std::uint8_t>& raw, int height, int width,
                           int resolution);

/// Pass-through validation for pixels already in [0,1].
VideoInput normalize_image(const Eigen::MatrixXd& raw, int resolution);

/// Index of the MFB frame nearest in time to a video frame, for streams at
/// different rates (e.g. 60 fps video against 100 fps MFB).
int nearest_mfb_index(int video_frame, double video_fps, double mfb_frames_per_second,
                      int mfb_count);

/// Minimal WAV reader; accepts 16 kHz mono 16-bit PCM only. Samples scaled
/// to [-1, 1].
std::vector<double> load_wav_16k_mono(const std::string& path);
void save_wav_16k_mono(const std::vector<double>& samples, const std::string& path);

}  // namespace avbf
