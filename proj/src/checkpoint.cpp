#include "dla/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

namespace dla {

namespace {

void write_u32(std::ostream& out, uint32_t v) {
    unsigned char buf[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                            static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

uint32_t read_u32(std::istream& in, const std::string& what, long& offset) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (in.gcount() != 4)
        throw FormatError("checkpoint truncated at byte " + std::to_string(offset) +
                          " while reading " + what);
    offset += 4;
    return static_cast<uint32_t>(buf[0]) | (static_cast<uint32_t>(buf[1]) << 8) |
           (static_cast<uint32_t>(buf[2]) << 16) | (static_cast<uint32_t>(buf[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<ParamInfo>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
    write_u32(out, static_cast<uint32_t>(params.size()));
    for (const ParamInfo& p : params) {
        write_u32(out, static_cast<uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_u32(out, static_cast<uint32_t>(p.tensor.shape().size()));
        for (int d : p.tensor.shape()) write_u32(out, static_cast<uint32_t>(d));
        out.write(reinterpret_cast<const char*>(p.tensor.data().data()),
                  static_cast<std::streamsize>(p.tensor.data().size() * sizeof(double)));
    }
    if (!out) throw FormatError("checkpoint: write failed for '" + path + "'");
}

void load_checkpoint(const std::string& path, std::vector<ParamInfo>& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint: cannot open '" + path + "'");
    long offset = 0;
    const uint32_t count = read_u32(in, "array count", offset);

    std::map<std::string, ParamInfo*> by_name;
    for (ParamInfo& p : params) by_name[p.name] = &p;
    if (count != params.size())
        throw FormatError("checkpoint holds " + std::to_string(count) + " arrays, network has " +
                          std::to_string(params.size()));

    for (uint32_t a = 0; a < count; ++a) {
        const uint32_t name_len = read_u32(in, "name length", offset);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (in.gcount() != static_cast<std::streamsize>(name_len))
            throw FormatError("checkpoint truncated at byte " + std::to_string(offset) +
                              " while reading a name");
        offset += name_len;
        const uint32_t rank = read_u32(in, "rank of " + name, offset);
        Shape shape(rank);
        for (uint32_t r = 0; r < rank; ++r)
            shape[r] = static_cast<int>(read_u32(in, "extent of " + name, offset));

        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("checkpoint: unknown array '" + name + "'");
        ParamInfo& p = *it->second;
        if (p.tensor.shape() != shape)
            throw FormatError("checkpoint: '" + name + "' has shape " + shape_str(shape) +
                              ", network wants " + shape_str(p.tensor.shape()));
        const long bytes = numel(shape) * static_cast<long>(sizeof(double));
        in.read(reinterpret_cast<char*>(p.tensor.data().data()), bytes);
        if (in.gcount() != bytes)
            throw FormatError("checkpoint truncated at byte " + std::to_string(offset) +
                              " while reading values of " + name);
        offset += bytes;
        check_finite("checkpoint", p.tensor.data());
    }
}

}  // namespace dla
