#include "avbf/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>

namespace avbf {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

int next_pow2(int n) {
    int p = 1;
    while (p < n) p <<= 1;
    return p;
}

/// In-place iterative radix-2 FFT. Size must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

}  // namespace

MelFilterbank::MelFilterbank(const MelConfig& config) : config_(config) {
    if (config_.num_filters < 1) throw InvalidArgument("mel: need at least one filter");
    if (config_.frame_length < 2) throw InvalidArgument("mel: frame too short");
    if (!(config_.high_hz > config_.low_hz)) throw InvalidArgument("mel: empty frequency range");
    fft_size_ = next_pow2(config_.frame_length);
    const int bins = fft_size_ / 2 + 1;

    const double mel_lo = hz_to_mel(config_.low_hz);
    const double mel_hi = hz_to_mel(config_.high_hz);
    const int m = config_.num_filters;
    std::vector<double> edges(m + 2);
    for (int i = 0; i < m + 2; ++i)
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (m + 1));
    centers_hz_.assign(edges.begin() + 1, edges.end() - 1);

    weights_ = Eigen::MatrixXd::Zero(m, bins);
    const double bin_hz = static_cast<double>(config_.sample_rate) / fft_size_;
    for (int f = 0; f < m; ++f) {
        const double lo = edges[f], mid = edges[f + 1], hi = edges[f + 2];
        for (int b = 0; b < bins; ++b) {
            const double hz = b * bin_hz;
            if (hz > lo && hz < mid)
                weights_(f, b) = (hz - lo) / (mid - lo);
            else if (hz >= mid && hz < hi)
                weights_(f, b) = (hi - hz) / (hi - mid);
        }
    }

    window_.resize(config_.frame_length);
    for (int i = 0; i < config_.frame_length; ++i)
        window_[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (config_.frame_length - 1));
}

MfbFrame MelFilterbank::apply(const std::vector<double>& samples, int timestamp) const {
    if (static_cast<int>(samples.size()) != config_.frame_length)
        throw InvalidArgument("mel: expected " + std::to_string(config_.frame_length) +
                              " samples, got " + std::to_string(samples.size()));
    std::vector<std::complex<double>> buf(static_cast<size_t>(fft_size_), {0.0, 0.0});
    for (int i = 0; i < config_.frame_length; ++i) buf[i] = samples[i] * window_[i];
    fft_radix2(buf);

    const int bins = fft_size_ / 2 + 1;
    Eigen::VectorXd power(bins);
    for (int b = 0; b < bins; ++b) power[b] = std::norm(buf[b]);

    MfbFrame frame;
    frame.timestamp = timestamp;
    Eigen::VectorXd energies = weights_ * power;
    for (int f = 0; f < config_.num_filters; ++f)
        frame.values[f] = std::log(energies[f] + config_.log_floor);
    return frame;
}

std::vector<MfbFrame> MelFilterbank::process(const std::vector<double>& samples) const {
    std::vector<MfbFrame> out;
    const int n = static_cast<int>(samples.size());
    int t = 0;
    for (int start = 0; start + config_.frame_length <= n; start += config_.frame_hop, ++t) {
        std::vector<double> frame(samples.begin() + start,
                                  samples.begin() + start + config_.frame_length);
        out.push_back(apply(frame, t));
    }
    return out;
}

double MelFilterbank::filter_center_hz(int index) const {
    if (index < 0 || index >= config_.num_filters) throw InvalidArgument("mel: filter index out of range");
    return centers_hz_[static_cast<size_t>(index)];
}

AudioWindow stack_context(const std::vector<MfbFrame>& stream, int t, ContextMode mode) {
    if (stream.empty()) throw InvalidArgument("stack_context: empty stream");
    const int n = static_cast<int>(stream.size());
    const int width = context_width(mode);
    const int first = t - 10;
    AudioWindow window;
    window.mode = mode;
    window.data.resize(kMfbBands, width);
    for (int c = 0; c < width; ++c) {
        const int idx = std::clamp(first + c, 0, n - 1);
        window.data.col(c) = stream[static_cast<size_t>(idx)].values;
    }
    return window;
}

VideoInput normalize_image(const std::vector<std::uint8_t>& raw, int height, int width,
                           int resolution) {
    if (height != resolution || width != resolution)
        throw InvalidArgument("normalize_image: expected " + std::to_string(resolution) + "x" +
                              std::to_string(resolution) + " image, got " + std::to_string(height) +
                              "x" + std::to_string(width));
    if (static_cast<int>(raw.size()) != height * width)
        throw InvalidArgument("normalize_image: pixel buffer size mismatch");
    VideoInput out;
    out.pixels.resize(height, width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            out.pixels(y, x) = raw[static_cast<size_t>(y * width + x)] / 255.0;
    return out;
}

VideoInput normalize_image(const Eigen::MatrixXd& raw, int resolution) {
    if (raw.rows() != resolution || raw.cols() != resolution)
        throw InvalidArgument("normalize_image: shape mismatch");
    if (!raw.allFinite() || raw.minCoeff() < 0.0 || raw.maxCoeff() > 1.0)
        throw InvalidArgument("normalize_image: float pixels must already be in [0,1]");
    return VideoInput{raw};
}

int nearest_mfb_index(int video_frame, double video_fps, double mfb_frames_per_second,
                      int mfb_count) {
    if (mfb_count < 1) throw InvalidArgument("nearest_mfb_index: empty MFB stream");
    if (!(video_fps > 0.0) || !(mfb_frames_per_second > 0.0))
        throw InvalidArgument("nearest_mfb_index: rates must be positive");
    const double t = video_frame / video_fps;
    const int idx = static_cast<int>(std::lround(t * mfb_frames_per_second));
    return std::clamp(idx, 0, mfb_count - 1);
}

namespace {

struct WavHeader {
    std::uint16_t format;
    std::uint16_t channels;
    std::uint32_t sample_rate;
    std::uint16_t bits;
};

}  // namespace

std::vector<double> load_wav_16k_mono(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open WAV file " + path);
    char riff[4], wave[4];
    std::uint32_t riff_size;
    in.read(riff, 4);
    in.read(reinterpret_cast<char*>(&riff_size), 4);
    in.read(wave, 4);
    if (!in || std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(wave, "WAVE", 4) != 0)
        throw BadFormatError(path + ": not a RIFF/WAVE file");

    WavHeader hdr{};
    std::vector<std::int16_t> pcm;
    bool have_fmt = false, have_data = false;
    while (in && !(have_fmt && have_data)) {
        char id[4];
        std::uint32_t size;
        in.read(id, 4);
        in.read(reinterpret_cast<char*>(&size), 4);
        if (!in) break;
        if (std::memcmp(id, "fmt ", 4) == 0) {
            std::vector<char> chunk(size);
            in.read(chunk.data(), size);
            if (size < 16) throw BadFormatError(path + ": short fmt chunk");
            std::memcpy(&hdr.format, chunk.data() + 0, 2);
            std::memcpy(&hdr.channels, chunk.data() + 2, 2);
            std::memcpy(&hdr.sample_rate, chunk.data() + 4, 4);
            std::memcpy(&hdr.bits, chunk.data() + 14, 2);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            pcm.resize(size / 2);
            in.read(reinterpret_cast<char*>(pcm.data()), size);
            have_data = true;
        } else {
            in.seekg(size + (size & 1), std::ios::cur);
        }
    }
    if (!have_fmt || !have_data) throw BadFormatError(path + ": missing fmt or data chunk");
    if (hdr.format != 1 || hdr.channels != 1 || hdr.sample_rate != 16000 || hdr.bits != 16)
        throw InvalidArgument(path + ": expected 16 kHz mono 16-bit PCM");

    std::vector<double> samples(pcm.size());
    for (size_t i = 0; i < pcm.size(); ++i) samples[i] = pcm[i] / 32768.0;
    return samples;
}

void save_wav_16k_mono(const std::vector<double>& samples, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write WAV file " + path);
    const std::uint32_t data_size = static_cast<std::uint32_t>(samples.size() * 2);
    const std::uint32_t riff_size = 36 + data_size;
    out.write("RIFF", 4);
    out.write(reinterpret_cast<const char*>(&riff_size), 4);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    const std::uint32_t fmt_size = 16;
    const std::uint16_t format = 1, channels = 1, bits = 16, block = 2;
    const std::uint32_t rate = 16000, byte_rate = 32000;
    out.write(reinterpret_cast<const char*>(&fmt_size), 4);
    out.write(reinterpret_cast<const char*>(&format), 2);
    out.write(reinterpret_cast<const char*>(&channels), 2);
    out.write(reinterpret_cast<const char*>(&rate), 4);
    out.write(reinterpret_cast<const char*>(&byte_rate), 4);
    out.write(reinterpret_cast<const char*>(&block), 2);
    out.write(reinterpret_cast<const char*>(&bits), 2);
    out.write("data", 4);
    out.write(reinterpret_cast<const char*>(&data_size), 4);
    for (double s : samples) {
        const long q = std::lround(std::clamp(s, -1.0, 1.0) * 32768.0);
        const auto v = static_cast<std::int16_t>(std::clamp<long>(q, -32768, 32767));
        out.write(reinterpret_cast<const char*>(&v), 2);
    }
}

}  // namespace avbf
