#include "somn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "somn/common.hpp"

namespace somn {

namespace {
constexpr const char* kMagic = "SOMN-CKPT 1";
}

void save_named_tensors(const std::string& path, uint64_t seed, const std::string& meta,
                        const std::vector<std::pair<std::string, const TensorF*>>& tensors) {
    if (meta.find('\n') != std::string::npos)
        throw UsageError("checkpoint meta must be a single line");

    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path + " for writing");

    os << kMagic << "\n";
    os << "seed " << seed << "\n";
    os << "meta " << (meta.empty() ? "-" : meta) << "\n";

    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        if (name.find(' ') != std::string::npos || name.find('\n') != std::string::npos)
            throw UsageError("tensor name '" + name + "' contains whitespace");
        os << "tensor " << name << " f32 " << t->rank();
        for (int d : t->shape()) os << " " << d;
        os << " " << offset << "\n";
        offset += static_cast<uint64_t>(t->numel()) * sizeof(float);
    }
    os << "blob " << offset << "\n";
    for (const auto& [name, t] : tensors)
        os.write(reinterpret_cast<const char*>(t->data()),
                 static_cast<std::streamsize>(t->numel() * sizeof(float)));
    if (!os) throw DataError("write failure on " + path);
}

LoadedTensors load_named_tensors(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path);

    std::string line;
    if (!std::getline(is, line) || line != kMagic)
        throw DataError(path + " is not a checkpoint (bad magic line)");

    LoadedTensors out;
    struct Pending {
        std::string name;
        std::vector<int> shape;
        uint64_t offset;
    };
    std::vector<Pending> pending;
    uint64_t blob_bytes = 0;

    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "seed") {
            ls >> out.seed;
        } else if (tag == "meta") {
            std::string rest;
            std::getline(ls, rest);
            if (!rest.empty() && rest.front() == ' ') rest.erase(rest.begin());
            out.meta = rest == "-" ? "" : rest;
        } else if (tag == "tensor") {
            Pending p;
            std::string dtype;
            int rank = 0;
            ls >> p.name >> dtype >> rank;
            if (dtype != "f32") throw DataError("unsupported tensor dtype '" + dtype + "'");
            p.shape.resize(static_cast<size_t>(rank));
            for (int i = 0; i < rank; ++i) ls >> p.shape[static_cast<size_t>(i)];
            ls >> p.offset;
            if (!ls) throw DataError("malformed tensor line: \"" + line + "\"");
            pending.push_back(std::move(p));
        } else if (tag == "blob") {
            ls >> blob_bytes;
            break;
        } else {
            throw DataError("unknown checkpoint line: \"" + line + "\"");
        }
    }

    std::vector<char> blob(blob_bytes);
    is.read(blob.data(), static_cast<std::streamsize>(blob_bytes));
    if (static_cast<uint64_t>(is.gcount()) != blob_bytes)
        throw DataError("checkpoint blob truncated in " + path);

    for (const auto& p : pending) {
        TensorF t(p.shape);
        const uint64_t bytes = static_cast<uint64_t>(t.numel()) * sizeof(float);
        if (p.offset + bytes > blob_bytes)
            throw DataError("tensor '" + p.name + "' extends past the blob");
        std::memcpy(t.data(), blob.data() + p.offset, bytes);
        out.order.push_back(p.name);
        out.tensors.emplace(p.name, std::move(t));
    }
    return out;
}

}  // namespace somn
