// SPDX-License-Identifier: Apache-2.0
#include "entsft/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "entsft/errors.hpp"

namespace entsft {

namespace {

constexpr char kMagic[8] = {'E', 'N', 'T', 'S', 'F', 'T', 'C', 'K'};

template <class T>
void put_le(std::vector<char>& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes, bytes + sizeof(T));
    }
    out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <class T>
T get_le(const char* p) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes, bytes + sizeof(T));
    }
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
}

void append_group(const std::string& group, const ParamSet& ps, Json& tensors, std::vector<char>& blob) {
    for (const auto& p : ps) {
        tensors.push_back({{"name", group + "/" + p.name},
                           {"shape", p.shape},
                           {"dtype", "float64-le"},
                           {"offset", blob.size()},
                           {"nbytes", p.data.size() * sizeof(double)}});
        for (double v : p.data) {
            put_le(blob, v);
        }
    }
}

std::optional<ParamSet> read_group(const std::string& group, const Json& tensors, const char* blob,
                                   std::size_t blob_size) {
    ParamSet ps;
    const std::string prefix = group + "/";
    bool any = false;
    for (const auto& t : tensors) {
        const auto name = t.at("name").get<std::string>();
        if (name.rfind(prefix, 0) != 0) {
            continue;
        }
        any = true;
        const auto shape = t.at("shape").get<std::vector<std::size_t>>();
        const auto offset = t.at("offset").get<std::size_t>();
        const auto nbytes = t.at("nbytes").get<std::size_t>();
        if (t.at("dtype").get<std::string>() != "float64-le") {
            throw std::runtime_error("checkpoint tensor " + name + " has unsupported dtype");
        }
        if (offset + nbytes > blob_size) {
            throw std::runtime_error("checkpoint tensor " + name + " extends past end of file");
        }
        const std::size_t idx = ps.add(name.substr(prefix.size()), shape);
        auto& data = ps[idx].data;
        if (data.size() * sizeof(double) != nbytes) {
            throw std::runtime_error("checkpoint tensor " + name + " size does not match its shape");
        }
        for (std::size_t i = 0; i < data.size(); ++i) {
            data[i] = get_le<double>(blob + offset + i * sizeof(double));
        }
    }
    if (!any) {
        return std::nullopt;
    }
    return ps;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    Json tensors = Json::array();
    std::vector<char> blob;
    append_group("student", ckpt.student, tensors, blob);
    if (ckpt.teacher) {
        append_group("teacher", *ckpt.teacher, tensors, blob);
    }
    if (ckpt.base) {
        append_group("base", *ckpt.base, tensors, blob);
    }
    append_group("adam_m", ckpt.adam_m, tensors, blob);
    append_group("adam_v", ckpt.adam_v, tensors, blob);

    Json manifest;
    manifest["format_version"] = kCheckpointVersion;
    manifest["step"] = ckpt.step;
    manifest["config_hash"] = hex64(ckpt.config_hash);
    manifest["adam_steps"] = ckpt.adam_steps;
    manifest["teacher_steps_since_sync"] = ckpt.teacher_steps_since_sync;
    manifest["config"] = ckpt.config;
    manifest["tensors"] = std::move(tensors);
    const std::string text = manifest.dump();

    std::vector<char> out(kMagic, kMagic + 8);
    put_le(out, kCheckpointVersion);
    put_le(out, static_cast<std::uint64_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), blob.begin(), blob.end());

    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) {
            throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        }
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) {
            throw std::runtime_error("write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open checkpoint " + path.string());
    }
    const std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw std::runtime_error(path.string() + " is not a checkpoint file");
    }
    const auto version = get_le<std::uint32_t>(bytes.data() + 8);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint format version " + std::to_string(version));
    }
    const auto mlen = get_le<std::uint64_t>(bytes.data() + 12);
    if (20 + mlen > bytes.size()) {
        throw std::runtime_error("truncated checkpoint manifest in " + path.string());
    }
    const Json manifest = Json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<std::ptrdiff_t>(mlen));
    const char* blob = bytes.data() + 20 + mlen;
    const std::size_t blob_size = bytes.size() - 20 - mlen;
    const Json& tensors = manifest.at("tensors");

    Checkpoint c;
    c.step = manifest.at("step").get<std::size_t>();
    c.config_hash = std::stoull(manifest.at("config_hash").get<std::string>(), nullptr, 16);
    c.adam_steps = manifest.at("adam_steps").get<std::size_t>();
    c.teacher_steps_since_sync = manifest.at("teacher_steps_since_sync").get<std::size_t>();
    c.config = manifest.at("config");
    auto student = read_group("student", tensors, blob, blob_size);
    if (!student) {
        throw std::runtime_error("checkpoint has no student parameters");
    }
    c.student = std::move(*student);
    c.teacher = read_group("teacher", tensors, blob, blob_size);
    c.base = read_group("base", tensors, blob, blob_size);
    c.adam_m = read_group("adam_m", tensors, blob, blob_size).value_or(c.student.zeros_like());
    c.adam_v = read_group("adam_v", tensors, blob, blob_size).value_or(c.student.zeros_like());
    return c;
}

}  // namespace entsft
