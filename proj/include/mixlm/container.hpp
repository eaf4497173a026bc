#pragma once

// Versioned binary tensor container plus a text manifest. Layout:
//   "MXLM" | u32 version | u64 header_len | header JSON | u32 n_tensors |
//   per tensor: u32 name_len | name | u32 rows | u32 cols | f32 data
// Tensor data is column-major 32-bit little-endian floats. The manifest
// lists one "tensor <name> <rows>x<cols> fnv1a64=<hex>" line per tensor.

#include <Eigen/Core>
#include <cstdint>
#include <fstream>

#include "mixlm/common.hpp"
#include "json.hpp"

namespace mixlm {

struct Container {
    std::uint32_t version = 1;
    nlohmann::json header;
    std::vector<std::string> names;
    std::vector<Eigen::MatrixXf> tensors;

    void add(const std::string& name, const Eigen::Ref<const Eigen::MatrixXf>& m) {
        names.push_back(name);
        tensors.emplace_back(m);
    }
    void add_double(const std::string& name,
                    const Eigen::Ref<const Eigen::MatrixXd>& m) {
        add(name, m.cast<float>());
    }

    const Eigen::MatrixXf& tensor(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return tensors[i];
        throw RuntimeError("container has no tensor named '" + name + "'");
    }
    bool has(const std::string& name) const {
        for (const auto& n : names)
            if (n == name) return true;
        return false;
    }
};

namespace detail {

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
        throw RuntimeError(std::string("container truncated reading ") + what);
    return v;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace detail

inline void save_container(const Container& c, const std::string& bin_path,
                           const std::string& manifest_path) {
    std::ofstream out(bin_path, std::ios::binary);
    if (!out) throw RuntimeError("cannot write container: " + bin_path);
    out.write("MXLM", 4);
    detail::write_pod<std::uint32_t>(out, c.version);
    std::string header = c.header.dump();
    detail::write_pod<std::uint64_t>(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    detail::write_pod<std::uint32_t>(out,
                                     static_cast<std::uint32_t>(c.tensors.size()));

    std::string manifest = "container-version " + std::to_string(c.version) +
                           "\nkind " +
                           c.header.value("kind", std::string("?")) + "\n";
    for (std::size_t i = 0; i < c.tensors.size(); ++i) {
        const auto& name = c.names[i];
        const auto& m = c.tensors[i];
        detail::write_pod<std::uint32_t>(out,
                                         static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<std::uint32_t>(out,
                                         static_cast<std::uint32_t>(m.rows()));
        detail::write_pod<std::uint32_t>(out,
                                         static_cast<std::uint32_t>(m.cols()));
        auto bytes = static_cast<std::size_t>(m.size()) * sizeof(float);
        out.write(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::streamsize>(bytes));
        manifest += "tensor " + name + " " + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()) + " fnv1a64=" +
                    detail::hex64(fnv1a64(m.data(), bytes)) + "\n";
    }
    if (!out) throw RuntimeError("container write failed: " + bin_path);
    out.close();
    write_text_file(manifest_path, manifest);
}

inline Container load_container(const std::string& bin_path) {
    std::ifstream in(bin_path, std::ios::binary);
    if (!in) throw RuntimeError("cannot open container: " + bin_path);
    char magic[4];
    if (!in.read(magic, 4) || std::string_view(magic, 4) != "MXLM")
        throw RuntimeError("not a model container: " + bin_path);
    Container c;
    c.version = detail::read_pod<std::uint32_t>(in, "version");
    if (c.version != 1)
        throw RuntimeError("unsupported container version " +
                           std::to_string(c.version));
    auto hlen = detail::read_pod<std::uint64_t>(in, "header length");
    std::string header(hlen, '\0');
    if (!in.read(header.data(), static_cast<std::streamsize>(hlen)))
        throw RuntimeError("container truncated reading header");
    c.header = nlohmann::json::parse(header);
    auto n = detail::read_pod<std::uint32_t>(in, "tensor count");
    for (std::uint32_t k = 0; k < n; ++k) {
        auto nlen = detail::read_pod<std::uint32_t>(in, "name length");
        std::string name(nlen, '\0');
        if (!in.read(name.data(), nlen))
            throw RuntimeError("container truncated reading tensor name");
        auto rows = detail::read_pod<std::uint32_t>(in, "rows");
        auto cols = detail::read_pod<std::uint32_t>(in, "cols");
        Eigen::MatrixXf m(rows, cols);
        auto bytes = static_cast<std::size_t>(m.size()) * sizeof(float);
        if (!in.read(reinterpret_cast<char*>(m.data()),
                     static_cast<std::streamsize>(bytes)))
            throw RuntimeError("container truncated reading tensor '" + name +
                               "'");
        c.names.push_back(std::move(name));
        c.tensors.push_back(std::move(m));
    }
    return c;
}

}  // namespace mixlm
