#include "avbf/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace avbf {

static_assert(std::endian::native == std::endian::little,
              "tensor container assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'A', 'V', 'T', 'F'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
    T value;
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw BadFormatError(what + ": truncated tensor data");
    return value;
}

}  // namespace

std::int64_t TensorData::element_count() const {
    std::int64_t n = 1;
    for (auto e : extents) n *= e;
    return n;
}

TensorData TensorData::from_f64(std::vector<std::int64_t> ex, std::vector<double> values) {
    TensorData t;
    t.dtype = DType::F64;
    t.extents = std::move(ex);
    t.f64 = std::move(values);
    if (t.element_count() != static_cast<std::int64_t>(t.f64.size()))
        throw InvalidArgument("tensor payload does not match extents");
    return t;
}

TensorData TensorData::from_f32(std::vector<std::int64_t> ex, std::vector<float> values) {
    TensorData t;
    t.dtype = DType::F32;
    t.extents = std::move(ex);
    t.f32 = std::move(values);
    if (t.element_count() != static_cast<std::int64_t>(t.f32.size()))
        throw InvalidArgument("tensor payload does not match extents");
    return t;
}

std::vector<double> TensorData::as_f64() const {
    if (dtype == DType::F64) return f64;
    return std::vector<double>(f32.begin(), f32.end());
}

void write_tensor_stream(const TensorData& tensor, std::ostream& out) {
    out.write(kMagic, 4);
    put<std::uint16_t>(out, kVersion);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(tensor.dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.extents.size()));
    for (auto e : tensor.extents) put<std::int64_t>(out, e);
    if (tensor.dtype == TensorData::DType::F32)
        out.write(reinterpret_cast<const char*>(tensor.f32.data()),
                  static_cast<std::streamsize>(tensor.f32.size() * sizeof(float)));
    else
        out.write(reinterpret_cast<const char*>(tensor.f64.data()),
                  static_cast<std::streamsize>(tensor.f64.size() * sizeof(double)));
}

TensorData read_tensor_stream(std::istream& in, const std::string& what) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw BadFormatError(what + ": bad magic, not an AVTF tensor");
    const auto version = get<std::uint16_t>(in, what);
    if (version != kVersion)
        throw BadFormatError(what + ": unsupported tensor version " + std::to_string(version));
    const auto dtype_code = get<std::uint16_t>(in, what);
    if (dtype_code > 1) throw BadFormatError(what + ": unknown dtype code " + std::to_string(dtype_code));
    const auto rank = get<std::uint32_t>(in, what);
    if (rank > 16) throw BadFormatError(what + ": implausible rank " + std::to_string(rank));
    TensorData t;
    t.dtype = static_cast<TensorData::DType>(dtype_code);
    std::int64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const auto e = get<std::int64_t>(in, what);
        if (e < 0) throw BadFormatError(what + ": negative extent");
        t.extents.push_back(e);
        count *= e;
    }
    if (t.dtype == TensorData::DType::F32) {
        t.f32.resize(static_cast<size_t>(count));
        in.read(reinterpret_cast<char*>(t.f32.data()),
                static_cast<std::streamsize>(count * static_cast<std::int64_t>(sizeof(float))));
    } else {
        t.f64.resize(static_cast<size_t>(count));
        in.read(reinterpret_cast<char*>(t.f64.data()),
                static_cast<std::streamsize>(count * static_cast<std::int64_t>(sizeof(double))));
    }
    if (!in) throw BadFormatError(what + ": truncated payload");
    return t;
}

void write_tensor_file(const TensorData& tensor, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write tensor file " + path);
    write_tensor_stream(tensor, out);
    if (!out) throw IoError("failed writing tensor file " + path);
}

TensorData read_tensor_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open tensor file " + path);
    return read_tensor_stream(in, path);
}

std::string file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file for checksum: " + path);
    std::uint64_t hash = 0xcbf29ce484222325ull;
    char buf[8192];
    while (in) {
        in.read(buf, sizeof(buf));
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            hash ^= static_cast<unsigned char>(buf[i]);
            hash *= 0x100000001b3ull;
        }
    }
    std::ostringstream hex;
    hex << std::hex;
    hex.width(16);
    hex.fill('0');
    hex << hash;
    return hex.str();
}

}  // namespace avbf
