#include "stablevsr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace stablevsr {

namespace {

constexpr char kMagic[8] = {'S', 'V', 'S', 'R', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u64(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, size_t pos)
{
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= std::uint64_t(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return v;
}

}  // namespace

const Tensor<float>& CheckpointFile::get(const std::string& name) const
{
    for (const auto& e : tensors)
        if (e.name == name)
            return e.tensor;
    throw FormatError("checkpoint has no tensor named " + name);
}

bool CheckpointFile::contains(const std::string& name) const
{
    for (const auto& e : tensors)
        if (e.name == name)
            return true;
    return false;
}

std::string encode_checkpoint(const CheckpointFile& file)
{
    nlohmann::json manifest;
    manifest["format"] = "stablevsr-checkpoint";
    manifest["version"] = 1;
    manifest["dtype"] = "float32";
    manifest["byte_order"] = "little";
    manifest["meta"] = file.meta;
    manifest["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& e : file.tensors) {
        const Shape& s = e.tensor.shape();
        const std::uint64_t bytes = std::uint64_t(e.tensor.size()) * sizeof(float);
        manifest["tensors"].push_back(
            {{"name", e.name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}, {"bytes", bytes}});
        offset += bytes;
    }
    const std::string header = manifest.dump();
    std::string out(kMagic, sizeof(kMagic));
    put_u64(out, header.size());
    out += header;
    out.reserve(out.size() + offset);
    for (const auto& e : file.tensors)
        out.append(reinterpret_cast<const char*>(e.tensor.data()), e.tensor.size() * sizeof(float));
    return out;
}

CheckpointFile decode_checkpoint(const std::string& bytes)
{
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw FormatError("not a checkpoint (bad magic or truncated header)");
    const std::uint64_t header_len = get_u64(bytes, 8);
    if (header_len > bytes.size() - 16)
        throw FormatError("checkpoint truncated inside the manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(16, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
    }
    if (manifest.value("format", "") != "stablevsr-checkpoint" || manifest.value("dtype", "") != "float32")
        throw FormatError("unsupported checkpoint format or dtype");

    const size_t blob = 16 + header_len;
    const size_t blob_size = bytes.size() - blob;
    CheckpointFile file;
    file.meta = manifest.value("meta", nlohmann::json::object());
    std::uint64_t expected_end = 0;
    try {
        for (const auto& t : manifest.at("tensors")) {
            const auto dims = t.at("shape").get<std::vector<Index>>();
            if (dims.size() != 4)
                throw FormatError("tensor shape must have 4 dims");
            const Shape shape{dims[0], dims[1], dims[2], dims[3]};
            const std::uint64_t offset = t.at("offset").get<std::uint64_t>();
            const std::uint64_t n = t.at("bytes").get<std::uint64_t>();
            if (n != std::uint64_t(shape.size()) * sizeof(float))
                throw FormatError("tensor " + t.at("name").get<std::string>() + ": byte count does not match shape");
            if (offset + n > blob_size)
                throw FormatError("checkpoint truncated: tensor " + t.at("name").get<std::string>() +
                                  " extends past end of file");
            Tensor<float> tensor(shape);
            std::memcpy(tensor.data(), bytes.data() + blob + offset, n);
            file.add(t.at("name").get<std::string>(), std::move(tensor));
            expected_end = std::max(expected_end, offset + n);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed checkpoint manifest: ") + e.what());
    }
    if (expected_end != blob_size)
        throw FormatError("checkpoint blob size does not match its manifest");
    return file;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file)
{
    const std::string bytes = encode_checkpoint(file);
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw FormatError("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

CheckpointFile read_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace stablevsr
