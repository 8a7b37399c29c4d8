#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpsr/tensor.hpp"

namespace mpsr {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParamStore;

enum class ArrayDtype : unsigned char { f32 = 1, f64 = 2 };

/// Single-file parameter archive.
///
/// Layout (little-endian):
///   "MPSRARC\0"  u32 format_version
///   u32 manifest_bytes, manifest (JSON text)
///   u32 entry_count, then per entry:
///     u32 name_bytes, name, u8 dtype, u8 rank (=4), i32 dims[4], payload
///
/// Names are hierarchical ("fsr.sfe.conv.w"). The manifest carries the
/// model/training config and anything else the writer wants to round-trip.
class Archive {
public:
    static constexpr unsigned kFormatVersion = 1;

    nlohmann::json manifest = nlohmann::json::object();

    void put(const std::string& name, const Tensor& t, ArrayDtype dtype = ArrayDtype::f64);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    std::vector<std::string> names() const;
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;

    void save(const std::filesystem::path& path) const;
    static Archive load(const std::filesystem::path& path);

private:
    struct Entry {
        std::string name;
        Tensor tensor;
        ArrayDtype dtype;
    };
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

/// Stores every parameter whose name starts with prefix.
void put_params(Archive& archive, const ParamStore& store, const std::string& prefix = "",
                ArrayDtype dtype = ArrayDtype::f64);
/// Loads every parameter of the store under prefix; missing names or shape
/// mismatches throw IoError.
void get_params(const Archive& archive, ParamStore& store, const std::string& prefix = "");

} // namespace mpsr
