#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "avbf/error.hpp"

namespace avbf {

/// Dense n-d array container, one tensor per file.
///
/// Layout (all little-endian):
///   magic "AVTF" | version u16 | dtype u16 (0 = f32, 1 = f64) |
///   rank u32 | extents i64[rank] | payload (product(extents) scalars)
struct TensorData {
    enum class DType : std::uint16_t { F32 = 0, F64 = 1 };

    DType dtype = DType::F64;
    std::vector<std::int64_t> extents;
    std::vector<float> f32;    // populated when dtype == F32
    std::vector<double> f64;   // populated when dtype == F64

    std::int64_t element_count() const;

    static TensorData from_f64(std::vector<std::int64_t> extents, std::vector<double> values);
    static TensorData from_f32(std::vector<std::int64_t> extents, std::vector<float> values);

    /// Values widened to double regardless of storage dtype.
    std::vector<double> as_f64() const;
};

void write_tensor_file(const TensorData& tensor, const std::string& path);
TensorData read_tensor_file(const std::string& path);

void write_tensor_stream(const TensorData& tensor, std::ostream& out);
TensorData read_tensor_stream(std::istream& in, const std::string& what);

/// FNV-1a 64 over a file's bytes, as a 16-digit hex string. Used for the
/// dataset manifest checksums.
std::string file_checksum(const std::string& path);

}  // namespace avbf
