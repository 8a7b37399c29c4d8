#include "mpsr/archive.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "mpsr/layers.hpp"

namespace mpsr {

namespace {

constexpr char kMagic[8] = {'M', 'P', 'S', 'R', 'A', 'R', 'C', '\0'};

template <typename T>
void write_pod(std::ostream& os, T v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is)
{
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is)
        throw IoError("archive: truncated file");
    return v;
}

std::string read_string(std::istream& is, std::uint32_t len)
{
    std::string s(len, '\0');
    is.read(s.data(), len);
    if (!is)
        throw IoError("archive: truncated file");
    return s;
}

} // namespace

void Archive::put(const std::string& name, const Tensor& t, ArrayDtype dtype)
{
    auto it = index_.find(name);
    if (it != index_.end()) {
        entries_[it->second] = Entry{name, t, dtype};
        return;
    }
    index_[name] = entries_.size();
    entries_.push_back(Entry{name, t, dtype});
}

const Tensor& Archive::get(const std::string& name) const
{
    auto it = index_.find(name);
    if (it == index_.end())
        throw IoError("archive: no array named " + name);
    return entries_[it->second].tensor;
}

std::vector<std::string> Archive::names() const
{
    std::vector<std::string> out;
    for (const auto& e : entries_)
        out.push_back(e.name);
    return out;
}

std::vector<std::string> Archive::names_with_prefix(const std::string& prefix) const
{
    std::vector<std::string> out;
    for (const auto& e : entries_)
        if (e.name.rfind(prefix, 0) == 0)
            out.push_back(e.name);
    return out;
}

void Archive::save(const std::filesystem::path& path) const
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os)
            throw IoError("archive: cannot write " + tmp);
        os.write(kMagic, sizeof(kMagic));
        write_pod<std::uint32_t>(os, kFormatVersion);
        nlohmann::json m = manifest;
        m["format_version"] = kFormatVersion;
        const std::string text = m.dump();
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
        os.write(text.data(), static_cast<std::streamsize>(text.size()));
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(entries_.size()));
        for (const auto& e : entries_) {
            write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
            os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
            write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(e.dtype));
            write_pod<std::uint8_t>(os, 4);
            const Shape s = e.tensor.shape();
            for (int d : {s.n, s.c, s.h, s.w})
                write_pod<std::int32_t>(os, d);
            if (e.dtype == ArrayDtype::f64) {
                os.write(reinterpret_cast<const char*>(e.tensor.data()), static_cast<std::streamsize>(e.tensor.size() * 8));
            } else {
                std::vector<float> buf(e.tensor.values().begin(), e.tensor.values().end());
                os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
            }
        }
        if (!os)
            throw IoError("archive: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Archive Archive::load(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw IoError("archive: cannot open " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("archive: bad magic in " + path.string());
    const auto version = read_pod<std::uint32_t>(is);
    if (version != kFormatVersion)
        throw IoError("archive: unsupported format version " + std::to_string(version));
    Archive a;
    try {
        a.manifest = nlohmann::json::parse(read_string(is, read_pod<std::uint32_t>(is)));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("archive: bad manifest: ") + e.what());
    }
    const auto count = read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < count; i++) {
        const std::string name = read_string(is, read_pod<std::uint32_t>(is));
        const auto dtype = static_cast<ArrayDtype>(read_pod<std::uint8_t>(is));
        const auto rank = read_pod<std::uint8_t>(is);
        if (rank != 4)
            throw IoError("archive: unsupported rank for " + name);
        Shape s;
        s.n = read_pod<std::int32_t>(is);
        s.c = read_pod<std::int32_t>(is);
        s.h = read_pod<std::int32_t>(is);
        s.w = read_pod<std::int32_t>(is);
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
            throw IoError("archive: negative extent for " + name);
        Tensor t(s);
        if (dtype == ArrayDtype::f64) {
            is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
        } else if (dtype == ArrayDtype::f32) {
            std::vector<float> buf(t.size());
            is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
            for (std::size_t k = 0; k < buf.size(); k++)
                t[k] = buf[k];
        } else {
            throw IoError("archive: unknown dtype for " + name);
        }
        if (!is)
            throw IoError("archive: truncated payload for " + name);
        a.put(name, t, dtype);
    }
    return a;
}

void put_params(Archive& archive, const ParamStore& store, const std::string& prefix, ArrayDtype dtype)
{
    for (const auto& name : store.names_with_prefix(prefix))
        archive.put(name, store.get(name).value(), dtype);
}

void get_params(const Archive& archive, ParamStore& store, const std::string& prefix)
{
    for (const auto& name : store.names_with_prefix(prefix)) {
        if (!archive.contains(name))
            throw IoError("archive: missing parameter " + name);
        const Tensor& src = archive.get(name);
        Var v = store.get(name);
        if (!(src.shape() == v.shape()))
            throw IoError("archive: " + name + " has shape " + src.shape().str() + ", model expects " + v.shape().str());
        v.mutable_value() = src;
    }
}

} // namespace mpsr
