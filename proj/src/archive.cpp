#include "hazesynth/archive.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <fmt/format.h>
#include <zlib.h>

#include "hazesynth/errors.hpp"

namespace hazesynth {

namespace {

constexpr char kMagic[8] = {'H', 'Z', 'S', 'A', 'R', 'C', 'H', '\0'};

std::string dtype_name(torch::ScalarType t) {
    switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    case torch::kUInt8: return "u8";
    default: throw InvalidArgument(fmt::format("archive: unsupported dtype {}", c10::toString(t)));
    }
}

torch::ScalarType dtype_from_name(const std::string& s) {
    if (s == "f32") return torch::kFloat32;
    if (s == "f64") return torch::kFloat64;
    if (s == "i64") return torch::kInt64;
    if (s == "u8") return torch::kUInt8;
    throw FormatError(fmt::format("archive: unknown dtype '{}'", s));
}

template <typename T>
void append_pod(std::string& out, T v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(const std::string& buf, std::size_t& pos) {
    if (pos + sizeof(T) > buf.size())
        throw FormatError("archive: truncated file");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

uint32_t crc_of(const char* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<uint32_t>(crc);
}

} // namespace

void Archive::put(const std::string& name, const torch::Tensor& t) {
    dtype_name(t.scalar_type());
    arrays_[name] = t.detach().to(torch::kCPU).contiguous().clone();
}

const torch::Tensor& Archive::get(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end())
        throw FormatError(fmt::format("archive: missing array '{}'", name));
    return it->second;
}

void Archive::save(const std::filesystem::path& path) const {
    nlohmann::json header;
    header["kind"] = kind_;
    header["meta"] = meta_;
    header["arrays"] = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : arrays_) {
        const std::size_t nbytes = t.numel() * t.element_size();
        header["arrays"].push_back({{"name", name},
                                    {"dtype", dtype_name(t.scalar_type())},
                                    {"shape", t.sizes().vec()},
                                    {"offset", offset},
                                    {"nbytes", nbytes}});
        offset += nbytes;
    }
    const std::string header_text = header.dump();

    std::string body;
    body.reserve(header_text.size() + offset);
    body += header_text;
    for (const auto& [name, t] : arrays_)
        body.append(static_cast<const char*>(t.data_ptr()), t.numel() * t.element_size());

    std::string out(kMagic, sizeof(kMagic));
    append_pod<uint32_t>(out, kFormatVersion);
    append_pod<uint32_t>(out, 0);
    append_pod<uint64_t>(out, header_text.size());
    out += body;
    append_pod<uint32_t>(out, crc_of(body.data(), body.size()));

    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f)
            throw Error(fmt::format("cannot open {} for writing", tmp.string()));
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f)
            throw Error(fmt::format("failed writing {}", tmp.string()));
    }
    std::filesystem::rename(tmp, path);
}

Archive Archive::load(const std::filesystem::path& path, std::string_view expected_kind) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec))
        throw NotFoundError(fmt::format("archive not found: {}", path.string()));
    std::ifstream f(path, std::ios::binary);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw FormatError(fmt::format("{}: not a hazesynth archive", path.string()));
    std::size_t pos = sizeof(kMagic);
    const auto version = read_pod<uint32_t>(buf, pos);
    if (version != kFormatVersion)
        throw IncompatibleVersionError(fmt::format(
            "{}: archive format version {} is not supported (expected {})", path.string(), version,
            kFormatVersion));
    read_pod<uint32_t>(buf, pos);
    const auto header_len = read_pod<uint64_t>(buf, pos);
    if (header_len > buf.size() - pos)
        throw FormatError(fmt::format("{}: truncated header", path.string()));

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                                       buf.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("{}: corrupt header: {}", path.string(), e.what()));
    }

    const std::size_t body_begin = pos;
    const std::size_t data_begin = pos + header_len;
    std::size_t data_len = 0;
    try {
        for (const auto& a : header.at("arrays"))
            data_len = std::max(data_len, a.at("offset").get<std::size_t>() +
                                              a.at("nbytes").get<std::size_t>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("{}: corrupt header: {}", path.string(), e.what()));
    }
    if (buf.size() != data_begin + data_len + sizeof(uint32_t))
        throw FormatError(fmt::format("{}: truncated or oversized archive", path.string()));
    std::size_t crc_pos = data_begin + data_len;
    const auto stored_crc = read_pod<uint32_t>(buf, crc_pos);
    if (stored_crc != crc_of(buf.data() + body_begin, header_len + data_len))
        throw FormatError(fmt::format("{}: checksum mismatch", path.string()));

    Archive ar(header.value("kind", std::string{}));
    if (!expected_kind.empty() && ar.kind_ != expected_kind)
        throw FormatError(fmt::format("{}: expected a '{}' archive, found '{}'", path.string(),
                                      expected_kind, ar.kind_));
    ar.meta_ = header.value("meta", nlohmann::json::object());
    for (const auto& a : header.at("arrays")) {
        const auto dtype = dtype_from_name(a.at("dtype").get<std::string>());
        const auto shape = a.at("shape").get<std::vector<int64_t>>();
        const auto offset = a.at("offset").get<std::size_t>();
        const auto nbytes = a.at("nbytes").get<std::size_t>();
        auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
        if (static_cast<std::size_t>(t.numel() * t.element_size()) != nbytes)
            throw FormatError(fmt::format("{}: size mismatch for '{}'", path.string(),
                                          a.at("name").get<std::string>()));
        std::memcpy(t.data_ptr(), buf.data() + data_begin + offset, nbytes);
        ar.arrays_[a.at("name").get<std::string>()] = std::move(t);
    }
    return ar;
}

void store_module(Archive& ar, const std::string& prefix, const torch::nn::Module& module) {
    for (const auto& p : module.named_parameters(true))
        ar.put(prefix + p.key(), p.value());
    for (const auto& b : module.named_buffers(true))
        ar.put(prefix + b.key(), b.value());
}

void restore_module(const Archive& ar, const std::string& prefix, torch::nn::Module& module) {
    torch::NoGradGuard no_grad;
    auto assign = [&](const std::string& key, torch::Tensor& dst) {
        const auto& src = ar.get(prefix + key);
        if (src.sizes() != dst.sizes())
            throw FormatError(fmt::format("archive: shape mismatch for '{}{}'", prefix, key));
        dst.copy_(src);
    };
    for (auto& p : module.named_parameters(true))
        assign(p.key(), p.value());
    for (auto& b : module.named_buffers(true))
        assign(b.key(), b.value());
}

} // namespace hazesynth
