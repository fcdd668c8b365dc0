#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtlk/tensor.hpp"

namespace mtlk::io {

inline constexpr std::uint32_t kFormatVersion = 1;

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

// On-disk container: "MTLK" magic, format version, run seed, a config echo,
// and a named array table of 64-bit little-endian floats. Round-trips
// bitwise; loading rejects unknown versions, bad magic, truncation, and
// trailing bytes.
struct Container {
    std::uint64_t seed = 0;
    std::string config_echo;
    std::vector<NamedArray> arrays;

    void put(const std::string& name, Shape shape, std::vector<double> data);
    void put(const std::string& name, const Tensor& tensor);
    void put_scalar(const std::string& name, double value);

    bool has(const std::string& name) const;
    const NamedArray& get(const std::string& name) const;
    Tensor tensor(const std::string& name) const;
    double scalar_value(const std::string& name) const;
};

std::vector<std::uint8_t> encode_container(const Container& container);
Container decode_container(const std::vector<std::uint8_t>& bytes);

// Atomic: writes a temp file in the target directory, then renames.
void save_container(const std::filesystem::path& path, const Container& container);
Container load_container(const std::filesystem::path& path);

}  // namespace mtlk::io
