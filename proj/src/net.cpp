#include "avbf/net.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "avbf/rng.hpp"

namespace avbf {

using nlohmann::json;
using net::Tape;
using net::Tensor;

void NetConfig::validate() const {
    if (video_channels.size() != video_strides.size())
        throw InvalidArgument("net config: one stride per video layer required");
    if (video_channels.empty() || audio_channels.empty())
        throw InvalidArgument("net config: empty encoder stack");
    if (scale_factor < 1) throw InvalidArgument("net config: scale_factor must be >= 1");
    if (k_speech < 1 || k_nonspeech < 0) throw InvalidArgument("net config: bad output dims");
    if (landmark_count < 1) throw InvalidArgument("net config: bad landmark count");
    if (image_resolution < 4) throw InvalidArgument("net config: image resolution too small");
    for (int c : video_channels)
        if (c < 1) throw InvalidArgument("net config: bad channel count");
    for (int c : audio_channels)
        if (c < 1) throw InvalidArgument("net config: bad channel count");
}

std::vector<ConvPlan> plan_video_stack(const NetConfig& config) {
    std::vector<ConvPlan> plan;
    int h = config.resolution(), w = config.resolution(), c = 1;
    for (size_t layer = 0; layer < config.video_channels.size(); ++layer) {
        if (h < 3 || w < 3) break;  // desk scale can exhaust the spatial extent early
        const int stride = config.video_strides[layer];
        ConvPlan p;
        p.in_h = h;
        p.in_w = w;
        p.in_c = c;
        p.filters = config.scaled_channels(config.video_channels[layer]);
        p.stride = stride;
        p.out_h = (h - 3) / stride + 1;
        p.out_w = (w - 3) / stride + 1;
        plan.push_back(p);
        h = p.out_h;
        w = p.out_w;
        c = p.filters;
    }
    if (plan.empty()) throw InvalidArgument("net config: resolution too small for any conv layer");
    return plan;
}

std::vector<ConvPlan> plan_audio_stack(const NetConfig& config) {
    std::vector<ConvPlan> plan;
    int h = kMfbBands, w = config.audio_window(), c = 1;
    for (size_t layer = 0; layer < config.audio_channels.size(); ++layer) {
        if (h < 3 || w < 3)
            throw InvalidArgument("net config: audio window too small for the conv stack");
        const int stride = config.audio_stride(static_cast<int>(layer));
        ConvPlan p;
        p.in_h = h;
        p.in_w = w;
        p.in_c = c;
        p.filters = config.scaled_channels(config.audio_channels[layer]);
        p.stride = stride;
        p.out_h = (h - 3) / stride + 1;
        p.out_w = (w - 3) / stride + 1;
        plan.push_back(p);
        h = p.out_h;
        w = p.out_w;
        c = p.filters;
    }
    return plan;
}

int video_embedding_dim(const NetConfig& config) {
    const auto plan = plan_video_stack(config);
    const auto& last = plan.back();
    return last.out_h * last.out_w * last.filters;
}

int audio_embedding_dim(const NetConfig& config) { return config.scaled_embedding(); }

namespace {

Tensor init_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / std::max(1, fan_in));
    for (auto& v : t.v) v = rng.uniform(-bound, bound);
    return t;
}

int flat_dim(const ConvPlan& last) { return last.out_h * last.out_w * last.filters; }

}  // namespace

AvNet AvNet::init(const NetConfig& config, std::uint64_t seed) {
    config.validate();
    AvNet net;
    net.config_ = config;
    Rng rng(seed);

    // Draw order is fixed: video convs, audio convs, audio dense, fuse,
    // non-speech head, pose head. Biases start at zero.
    for (const ConvPlan& p : plan_video_stack(config)) {
        ConvParams layer;
        layer.w = init_uniform({3, 3, p.in_c, p.filters}, 9 * p.in_c, rng);
        layer.b = Tensor({p.filters});
        net.video_conv_.push_back(std::move(layer));
    }
    const auto audio_plan = plan_audio_stack(config);
    for (const ConvPlan& p : audio_plan) {
        ConvParams layer;
        layer.w = init_uniform({3, 3, p.in_c, p.filters}, 9 * p.in_c, rng);
        layer.b = Tensor({p.filters});
        net.audio_conv_.push_back(std::move(layer));
    }
    const int audio_flat = flat_dim(audio_plan.back());
    const int e_a = audio_embedding_dim(config);
    net.audio_dense_.w = init_uniform({e_a, audio_flat}, audio_flat, rng);
    net.audio_dense_.b = Tensor({e_a});

    const int e_v = video_embedding_dim(config);
    net.fuse_.w = init_uniform({config.k_speech, e_a + e_v}, e_a + e_v, rng);
    net.fuse_.b = Tensor({config.k_speech});
    net.xv_head_.w = init_uniform({config.k_nonspeech, e_v}, e_v, rng);
    net.xv_head_.b = Tensor({config.k_nonspeech});
    net.pose_head_.w = init_uniform({6, e_v}, e_v, rng);
    net.pose_head_.b = Tensor({6});
    return net;
}

std::vector<std::pair<std::string, Tensor*>> AvNet::named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (size_t i = 0; i < video_conv_.size(); ++i) {
        out.emplace_back("video.conv" + std::to_string(i) + ".w", &video_conv_[i].w);
        out.emplace_back("video.conv" + std::to_string(i) + ".b", &video_conv_[i].b);
    }
    for (size_t i = 0; i < audio_conv_.size(); ++i) {
        out.emplace_back("audio.conv" + std::to_string(i) + ".w", &audio_conv_[i].w);
        out.emplace_back("audio.conv" + std::to_string(i) + ".b", &audio_conv_[i].b);
    }
    out.emplace_back("audio.dense.w", &audio_dense_.w);
    out.emplace_back("audio.dense.b", &audio_dense_.b);
    out.emplace_back("head.fuse.w", &fuse_.w);
    out.emplace_back("head.fuse.b", &fuse_.b);
    out.emplace_back("head.xv.w", &xv_head_.w);
    out.emplace_back("head.xv.b", &xv_head_.b);
    out.emplace_back("head.pose.w", &pose_head_.w);
    out.emplace_back("head.pose.b", &pose_head_.b);
    return out;
}

AvNet::Bound AvNet::bind(Tape& tape) {
    Bound b;
    for (auto& layer : video_conv_) {
        b.video_w.push_back(tape.parameter(layer.w));
        b.video_b.push_back(tape.parameter(layer.b));
    }
    for (auto& layer : audio_conv_) {
        b.audio_w.push_back(tape.parameter(layer.w));
        b.audio_b.push_back(tape.parameter(layer.b));
    }
    b.audio_dense_w = tape.parameter(audio_dense_.w);
    b.audio_dense_b = tape.parameter(audio_dense_.b);
    b.fuse_w = tape.parameter(fuse_.w);
    b.fuse_b = tape.parameter(fuse_.b);
    b.xv_w = tape.parameter(xv_head_.w);
    b.xv_b = tape.parameter(xv_head_.b);
    b.pose_w = tape.parameter(pose_head_.w);
    b.pose_b = tape.parameter(pose_head_.b);
    return b;
}

AvNet::SampleIds AvNet::forward_sample(Tape& tape, const Bound& bound, const VideoInput& video,
                                       const AudioWindow& audio, ForwardTrace* trace) const {
    const int res = config_.resolution();
    if (video.pixels.rows() != res || video.pixels.cols() != res)
        throw InvalidArgument("forward: video input must be " + std::to_string(res) + "x" +
                              std::to_string(res));
    const int width = config_.audio_window();
    if ((audio.mode == ContextMode::Causal) != config_.causal)
        throw InvalidArgument("forward: audio window mode does not match the net's causal flag");
    if (audio.data.rows() != kMfbBands || audio.data.cols() != width)
        throw InvalidArgument("forward: audio window must be " + std::to_string(kMfbBands) + "x" +
                              std::to_string(width));

    // Pack inputs row-major [H, W, 1].
    std::vector<double> vbuf(static_cast<size_t>(res) * res);
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) vbuf[static_cast<size_t>(y) * res + x] = video.pixels(y, x);
    Tape::NodeId v = tape.constant({res, res, 1}, vbuf);

    std::vector<double> abuf(static_cast<size_t>(kMfbBands) * width);
    for (int r = 0; r < kMfbBands; ++r)
        for (int c = 0; c < width; ++c) abuf[static_cast<size_t>(r) * width + c] = audio.data(r, c);
    Tape::NodeId a = tape.constant({kMfbBands, width, 1}, abuf);

    const auto video_plan = plan_video_stack(config_);
    for (size_t i = 0; i < video_plan.size(); ++i) {
        v = tape.conv2d_valid(v, bound.video_w[i], bound.video_b[i], video_plan[i].stride,
                              video_plan[i].stride);
        v = tape.relu(v);
        if (trace) trace->video_shapes.push_back(tape.shape(v));
    }
    const Tape::NodeId e_v = tape.reshape(v, {video_embedding_dim(config_)});

    const auto audio_plan = plan_audio_stack(config_);
    for (size_t i = 0; i < audio_plan.size(); ++i) {
        a = tape.conv2d_valid(a, bound.audio_w[i], bound.audio_b[i], audio_plan[i].stride,
                              audio_plan[i].stride);
        a = tape.relu(a);
        if (trace) trace->audio_shapes.push_back(tape.shape(a));
    }
    const Tape::NodeId flat = tape.reshape(a, {flat_dim(audio_plan.back())});
    // Dense output stays linear (no activation), unlike the video stack.
    const Tape::NodeId e_a = tape.dense(flat, bound.audio_dense_w, bound.audio_dense_b);

    const Tape::NodeId fused = tape.concat(e_a, e_v);
    SampleIds out;
    out.e_v = e_v;
    out.e_a = e_a;
    out.x_av = tape.dense(fused, bound.fuse_w, bound.fuse_b);
    out.x_v = tape.dense(e_v, bound.xv_w, bound.xv_b);
    out.pose = tape.dense(e_v, bound.pose_w, bound.pose_b);
    return out;
}

std::vector<NetOutput> AvNet::forward(const std::vector<std::pair<VideoInput, AudioWindow>>& batch) {
    std::vector<NetOutput> outputs;
    outputs.reserve(batch.size());
    for (const auto& [video, audio] : batch) {
        Tape tape;
        const Bound bound = bind(tape);
        const SampleIds ids = forward_sample(tape, bound, video, audio);
        NetOutput out;
        const auto xav = tape.value(ids.x_av);
        const auto xv = tape.value(ids.x_v);
        const auto pose = tape.value(ids.pose);
        out.x_av = Eigen::Map<const Eigen::VectorXd>(xav.data(), static_cast<Eigen::Index>(xav.size()));
        out.x_v = Eigen::Map<const Eigen::VectorXd>(xv.data(), static_cast<Eigen::Index>(xv.size()));
        for (int i = 0; i < 6; ++i) out.pose[i] = pose[static_cast<size_t>(i)];
        outputs.push_back(std::move(out));
    }
    return outputs;
}

void AvNet::zero_grads() {
    for (auto& [name, t] : named_parameters()) t->zero_grad();
}

std::string net_config_to_json(const NetConfig& config) {
    json doc;
    doc["video_channels"] = config.video_channels;
    doc["video_strides"] = config.video_strides;
    doc["audio_channels"] = config.audio_channels;
    doc["embedding_dim"] = config.embedding_dim;
    doc["causal"] = config.causal;
    doc["image_resolution"] = config.image_resolution;
    doc["scale_factor"] = config.scale_factor;
    doc["k_speech"] = config.k_speech;
    doc["k_nonspeech"] = config.k_nonspeech;
    doc["landmark_count"] = config.landmark_count;
    return doc.dump();
}

NetConfig net_config_from_json(const std::string& text) {
    NetConfig config;
    json doc;
    try {
        doc = json::parse(text);
        if (doc.contains("video_channels")) config.video_channels = doc["video_channels"].get<std::vector<int>>();
        if (doc.contains("video_strides")) config.video_strides = doc["video_strides"].get<std::vector<int>>();
        if (doc.contains("audio_channels")) config.audio_channels = doc["audio_channels"].get<std::vector<int>>();
        if (doc.contains("embedding_dim")) config.embedding_dim = doc["embedding_dim"].get<int>();
        if (doc.contains("causal")) config.causal = doc["causal"].get<bool>();
        if (doc.contains("image_resolution")) config.image_resolution = doc["image_resolution"].get<int>();
        if (doc.contains("scale_factor")) config.scale_factor = doc["scale_factor"].get<int>();
        if (doc.contains("k_speech")) config.k_speech = doc["k_speech"].get<int>();
        if (doc.contains("k_nonspeech")) config.k_nonspeech = doc["k_nonspeech"].get<int>();
        if (doc.contains("landmark_count")) config.landmark_count = doc["landmark_count"].get<int>();
    } catch (const json::exception& e) {
        throw BadFormatError(std::string("net config: ") + e.what());
    }
    config.validate();
    return config;
}

namespace {

constexpr char kCheckpointMagic[4] = {'A', 'V', 'B', 'F'};
constexpr std::uint16_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
    T value;
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw BadFormatError(what + ": truncated checkpoint");
    return value;
}

}  // namespace

void save_checkpoint(AvNet& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out.write(kCheckpointMagic, 4);
    put<std::uint16_t>(out, kCheckpointVersion);
    const std::string config = net_config_to_json(net.config());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(config.size()));
    out.write(config.data(), static_cast<std::streamsize>(config.size()));

    const auto params = net.named_parameters();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint16_t>(out, 1);  // dtype code: f64
        put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor->shape.size()));
        for (int e : tensor->shape) put<std::int64_t>(out, e);
        out.write(reinterpret_cast<const char*>(tensor->v.data()),
                  static_cast<std::streamsize>(tensor->v.size() * sizeof(double)));
    }
    if (!out) throw IoError("failed writing checkpoint " + path);
}

AvNet load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw BadFormatError(path + ": bad magic, not an AVBF checkpoint");
    const auto version = get<std::uint16_t>(in, path);
    if (version != kCheckpointVersion)
        throw BadFormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    const auto config_len = get<std::uint32_t>(in, path);
    std::string config_text(config_len, '\0');
    in.read(config_text.data(), config_len);
    if (!in) throw BadFormatError(path + ": truncated config echo");

    AvNet net = AvNet::init(net_config_from_json(config_text), 0);
    auto params = net.named_parameters();

    const auto count = get<std::uint32_t>(in, path);
    if (count != params.size())
        throw BadFormatError(path + ": tensor count does not match the config echo");
    for (auto& [name, tensor] : params) {
        const auto name_len = get<std::uint32_t>(in, path);
        std::string stored_name(name_len, '\0');
        in.read(stored_name.data(), name_len);
        if (!in || stored_name != name)
            throw BadFormatError(path + ": unexpected tensor '" + stored_name + "', wanted '" +
                                 name + "'");
        const auto dtype = get<std::uint16_t>(in, path);
        if (dtype != 1) throw BadFormatError(path + ": unsupported dtype code");
        const auto rank = get<std::uint32_t>(in, path);
        std::vector<int> extents;
        for (std::uint32_t i = 0; i < rank; ++i)
            extents.push_back(static_cast<int>(get<std::int64_t>(in, path)));
        if (extents != tensor->shape)
            throw BadFormatError(path + ": tensor '" + name + "' has unexpected extents");
        in.read(reinterpret_cast<char*>(tensor->v.data()),
                static_cast<std::streamsize>(tensor->v.size() * sizeof(double)));
        if (!in) throw BadFormatError(path + ": truncated tensor payload");
    }
    return net;
}

}  // namespace avbf
