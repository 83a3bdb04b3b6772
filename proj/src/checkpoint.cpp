#include "kpe_forge/checkpoint.hpp"

#include "kpe_forge/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

namespace kpeforge {

namespace {

constexpr char kMagic[8] = {'K', 'P', 'E', 'F', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
public:
    explicit Writer(std::string& buf) : buf_(buf) {}
    template <class T>
    void pod(const T& v) {
        buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void str(const std::string& s) {
        pod(static_cast<std::uint32_t>(s.size()));
        buf_.append(s);
    }
    void floats(const std::vector<float>& v) { buf_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float)); }

private:
    std::string& buf_;
};

class Reader {
public:
    Reader(const std::string& buf, const std::filesystem::path& path) : buf_(buf), path_(path) {}
    void need(std::size_t n, const char* what) const {
        if (pos_ + n > buf_.size())
            throw FormatError(path_.string() + ": truncated checkpoint while reading " + what);
    }
    template <class T>
    T pod(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof v);
        pos_ += sizeof v;
        return v;
    }
    std::string str(const char* what) {
        const auto n = pod<std::uint32_t>(what);
        need(n, what);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void floats(float* out, std::size_t n, const char* what) {
        need(n * sizeof(float), what);
        std::memcpy(out, buf_.data() + pos_, n * sizeof(float));
        pos_ += n * sizeof(float);
    }
    bool done() const noexcept { return pos_ == buf_.size(); }

private:
    const std::string& buf_;
    const std::filesystem::path& path_;
    std::size_t pos_{0};
};

} // namespace

void saveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const bool moments = !ckpt.adamM.empty();
    if (moments && (ckpt.adamM.size() != ckpt.params.size() || ckpt.adamV.size() != ckpt.params.size()))
        throw InvalidArgument("optimizer moments do not match the parameter count");
    std::string buf;
    Writer w(buf);
    buf.append(kMagic, sizeof kMagic);
    w.pod(kCheckpointVersion);
    w.pod(ckpt.configHash);
    w.str(ckpt.kind);
    w.str(ckpt.configText);
    w.pod(static_cast<std::int32_t>(ckpt.state.epoch));
    w.pod(ckpt.state.lr);
    w.pod(ckpt.state.bestLoss);
    w.pod(static_cast<std::int32_t>(ckpt.state.plateau));
    w.pod(ckpt.state.adamStep);
    for (auto word : ckpt.state.rng) w.pod(word);
    w.pod(static_cast<std::uint32_t>(ckpt.params.slots().size()));
    for (const auto& s : ckpt.params.slots()) {
        w.str(s.name);
        w.pod(static_cast<std::uint32_t>(s.rows));
        w.pod(static_cast<std::uint32_t>(s.cols));
    }
    w.floats(ckpt.params.buffer());
    w.pod(static_cast<std::uint8_t>(moments ? 1 : 0));
    if (moments) {
        w.floats(ckpt.adamM);
        w.floats(ckpt.adamV);
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) throw Error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint loadCheckpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expectedHash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("checkpoint not found: " + path.string());
    const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(buf, path);
    r.need(sizeof kMagic, "magic");
    if (std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
        throw FormatError(path.string() + ": not a kpe-forge checkpoint (bad magic bytes)");
    for (std::size_t i = 0; i < sizeof kMagic; ++i) r.pod<char>("magic");
    const auto version = r.pod<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw FormatError(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
    Checkpoint ck;
    ck.configHash = r.pod<std::uint64_t>("config hash");
    if (expectedHash && *expectedHash != ck.configHash) {
        std::ostringstream os;
        os << path.string() << ": config hash mismatch (checkpoint " << std::hex << std::setfill('0') << std::setw(16)
           << ck.configHash << ", requested " << std::setw(16) << *expectedHash << ")";
        throw ConfigError(os.str());
    }
    ck.kind = r.str("kind");
    ck.configText = r.str("config");
    ck.state.epoch = r.pod<std::int32_t>("training state");
    ck.state.lr = r.pod<double>("training state");
    ck.state.bestLoss = r.pod<double>("training state");
    ck.state.plateau = r.pod<std::int32_t>("training state");
    ck.state.adamStep = r.pod<std::uint64_t>("training state");
    for (auto& word : ck.state.rng) word = r.pod<std::uint64_t>("training state");
    const auto count = r.pod<std::uint32_t>("tensor table");
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str("tensor table");
        const auto rows = r.pod<std::uint32_t>("tensor table");
        const auto cols = r.pod<std::uint32_t>("tensor table");
        ck.params.add(std::move(name), static_cast<int>(rows), static_cast<int>(cols));
    }
    r.floats(ck.params.buffer().data(), ck.params.size(), "parameter data");
    const auto moments = r.pod<std::uint8_t>("moment flag");
    if (moments) {
        ck.adamM.resize(ck.params.size());
        ck.adamV.resize(ck.params.size());
        r.floats(ck.adamM.data(), ck.adamM.size(), "optimizer moments");
        r.floats(ck.adamV.data(), ck.adamV.size(), "optimizer moments");
    }
    if (!r.done()) throw FormatError(path.string() + ": trailing bytes after checkpoint data");
    return ck;
}

} // namespace kpeforge
