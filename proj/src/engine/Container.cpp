/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Container.cpp
 *
 */

#include "Container.hpp"

#include "chunkstream/Announcement.hpp"
#include "chunkstream/Errors.hpp"

#include "../JsonCodec.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <map>
#include <set>
#include <thread>

namespace chunkstream
{
namespace engine
{

namespace
{

void PutU16LE(std::vector<std::uint8_t> &out, std::uint16_t v)
{
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
}

void PutU32LE(std::vector<std::uint8_t> &out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
    {
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
}

void PutU64LE(std::vector<std::uint8_t> &out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i)
    {
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
}

std::uint16_t GetU16LE(const std::uint8_t *p)
{
    return static_cast<std::uint16_t>(p[0] | (std::uint16_t{p[1]} << 8));
}

std::uint32_t GetU32LE(const std::uint8_t *p)
{
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i)
    {
        v = (v << 8) | p[i];
    }
    return v;
}

std::uint64_t GetU64LE(const std::uint8_t *p)
{
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i)
    {
        v = (v << 8) | p[i];
    }
    return v;
}

void WriteAll(int fd, const std::uint8_t *data, std::size_t n)
{
    while (n > 0)
    {
        const ssize_t w = ::write(fd, data, n);
        if (w < 0)
        {
            if (errno == EINTR)
            {
                continue;
            }
            throw ContainerError(std::string("write failed: ") +
                                 std::strerror(errno));
        }
        data += w;
        n -= static_cast<std::size_t>(w);
    }
}

/** Reads exactly n bytes at offset off; returns false on EOF before n. */
bool PReadAll(int fd, std::uint64_t off, std::uint8_t *out, std::uint64_t n)
{
    while (n > 0)
    {
        const ssize_t r =
            ::pread(fd, out, n, static_cast<off_t>(off));
        if (r < 0)
        {
            if (errno == EINTR)
            {
                continue;
            }
            throw ContainerError(std::string("read failed: ") +
                                 std::strerror(errno));
        }
        if (r == 0)
        {
            return false;
        }
        out += r;
        off += static_cast<std::uint64_t>(r);
        n -= static_cast<std::uint64_t>(r);
    }
    return true;
}

std::uint64_t FileSize(int fd)
{
    struct stat st;
    if (::fstat(fd, &st) != 0)
    {
        throw ContainerError(std::string("fstat failed: ") +
                             std::strerror(errno));
    }
    return static_cast<std::uint64_t>(st.st_size);
}

class FileLock
{
public:
    explicit FileLock(int fd) : m_Fd(fd)
    {
        while (::flock(m_Fd, LOCK_EX) != 0)
        {
            if (errno != EINTR)
            {
                throw ContainerError(std::string("flock failed: ") +
                                     std::strerror(errno));
            }
        }
    }
    ~FileLock() { ::flock(m_Fd, LOCK_UN); }

    FileLock(const FileLock &) = delete;
    FileLock &operator=(const FileLock &) = delete;

private:
    int m_Fd;
};

constexpr std::size_t HeaderFixed = 8 + 2 + 8; // magic, version, json length
constexpr std::size_t TrailerFixed = 4 + 8 + 8; // crc, json length, magic
constexpr std::size_t RecordFixed = 4 + 1 + 8;  // crc, kind, body length

std::vector<std::uint8_t> HeaderBytes(const ContainerHeader &header)
{
    const std::string json = header.ToJsonText();
    std::vector<std::uint8_t> out;
    out.reserve(HeaderFixed + json.size());
    out.insert(out.end(), ContainerMagic, ContainerMagic + 8);
    PutU16LE(out, ContainerVersion);
    PutU64LE(out, json.size());
    out.insert(out.end(), json.begin(), json.end());
    return out;
}

/** Reads and checks the fixed header; returns (header, end offset). */
std::pair<ContainerHeader, std::uint64_t> ReadHeader(int fd)
{
    std::array<std::uint8_t, HeaderFixed> fixed;
    if (!PReadAll(fd, 0, fixed.data(), fixed.size()))
    {
        throw ContainerError("file too short for a container header");
    }
    if (std::memcmp(fixed.data(), ContainerMagic, 8) != 0)
    {
        throw ContainerError("not a container file (bad magic)");
    }
    const std::uint16_t version = GetU16LE(fixed.data() + 8);
    if (version != ContainerVersion)
    {
        throw ContainerError("unsupported container version " +
                             std::to_string(version));
    }
    const std::uint64_t json_len = GetU64LE(fixed.data() + 10);
    if (json_len > FileSize(fd))
    {
        throw ContainerError("container header length out of range");
    }
    std::string json(json_len, '\0');
    if (!PReadAll(fd, HeaderFixed,
                  reinterpret_cast<std::uint8_t *>(json.data()), json_len))
    {
        throw ContainerError("truncated container header");
    }
    return {ContainerHeader::FromJsonText(json), HeaderFixed + json_len};
}

/** Everything learned from walking the record stream. */
struct ScanResult
{
    // per step index: the fragments seen plus the payload spans aligned
    // with each fragment's chunk table
    std::map<std::uint64_t, std::vector<StepAnnouncement>> fragments;
    std::map<std::uint64_t, std::vector<std::vector<ChunkSpan>>> spans;
    std::set<std::uint32_t> closed_ranks;
};

/** Walks records from `begin`.  strict=true throws ContainerError on any
 *  malformed record; strict=false stops at the first one (salvage). */
ScanResult ScanRecords(int fd, std::uint64_t begin, bool strict)
{
    const std::uint64_t size = FileSize(fd);
    ScanResult result;
    std::uint64_t pos = begin;

    while (pos + RecordFixed <= size)
    {
        std::array<std::uint8_t, RecordFixed> fixed;
        if (!PReadAll(fd, pos, fixed.data(), fixed.size()))
        {
            break;
        }
        const std::uint32_t stored_crc = GetU32LE(fixed.data());
        const std::uint8_t kind = fixed[4];
        const std::uint64_t body_len = GetU64LE(fixed.data() + 5);

        if (body_len > size - pos - RecordFixed)
        {
            if (strict)
            {
                throw ContainerError("truncated record at offset " +
                                     std::to_string(pos));
            }
            break;
        }

        std::vector<std::uint8_t> body(body_len);
        if (body_len > 0 && !PReadAll(fd, pos + RecordFixed, body.data(),
                                      body_len))
        {
            if (strict)
            {
                throw ContainerError("truncated record at offset " +
                                     std::to_string(pos));
            }
            break;
        }

        std::uint32_t crc = Crc32(fixed.data() + 4, 1 + 8);
        crc = Crc32(body.data(), body.size(), crc);
        if (crc != stored_crc)
        {
            if (strict)
            {
                throw ContainerError("record checksum mismatch at offset " +
                                     std::to_string(pos));
            }
            break;
        }

        const std::uint64_t body_off = pos + RecordFixed;
        if (kind == RecordStep)
        {
            // The announcement block is a self-delimiting prefix of the
            // body; the chunk payloads follow it back to back.
            if (body.size() < 12 ||
                12 + GetU64LE(body.data() + 4) > body.size())
            {
                if (strict)
                {
                    throw ContainerError(
                        "malformed step record at offset " +
                        std::to_string(pos));
                }
                break;
            }
            const std::uint64_t block = 12 + GetU64LE(body.data() + 4);
            StepAnnouncement fragment;
            try
            {
                fragment = DecodeAnnouncement(
                    {body.data(), static_cast<std::size_t>(block)});
            }
            catch (const Error &)
            {
                if (strict)
                {
                    throw;
                }
                break;
            }
            std::vector<ChunkSpan> chunk_spans;
            std::uint64_t payload_off = body_off + block;
            bool ok = true;
            for (const WrittenChunk &chunk : fragment.chunk_table)
            {
                const DatasetDecl *decl = fragment.FindDataset(chunk.dataset);
                if (decl == nullptr)
                {
                    if (strict)
                    {
                        throw ContainerError(
                            "step record chunk references undeclared "
                            "dataset '" +
                            chunk.dataset + "'");
                    }
                    ok = false;
                    break;
                }
                const std::uint64_t len =
                    ByteSize(chunk.region, decl->elem_kind);
                chunk_spans.push_back(ChunkSpan{payload_off, len});
                payload_off += len;
            }
            if (!ok)
            {
                break;
            }
            if (payload_off - body_off != body_len)
            {
                if (strict)
                {
                    throw ContainerError(
                        "step record payload size mismatch at offset " +
                        std::to_string(pos));
                }
                break;
            }
            result.fragments[fragment.step_index].push_back(
                std::move(fragment));
            result.spans[fragment.step_index].push_back(
                std::move(chunk_spans));
        }
        else if (kind == RecordClose)
        {
            const codec::Json j = codec::Parse(
                std::string(body.begin(), body.end()), "close record");
            for (const auto &r : codec::Require(j, "ranks", "close record"))
            {
                result.closed_ranks.insert(r.get<std::uint32_t>());
            }
        }
        else
        {
            if (strict)
            {
                throw ContainerError("unknown record kind " +
                                     std::to_string(kind) + " at offset " +
                                     std::to_string(pos));
            }
            break;
        }

        pos += RecordFixed + body_len;
    }
    return result;
}

/** Merges the scanned fragments of each step and aligns the payload
 *  spans with the merged chunk tables. */
std::vector<ContainerStep> AssembleSteps(ScanResult &scan)
{
    std::vector<ContainerStep> steps;
    for (auto &[step_index, fragments] : scan.fragments)
    {
        ContainerStep step;
        step.announcement = MergeAnnouncements(fragments);

        // Pair every fragment chunk with its span, then align to the
        // merged (canonically sorted) chunk table.
        std::vector<std::pair<const WrittenChunk *, ChunkSpan>> pool;
        const auto &span_lists = scan.spans[step_index];
        for (std::size_t f = 0; f < fragments.size(); ++f)
        {
            for (std::size_t c = 0; c < fragments[f].chunk_table.size(); ++c)
            {
                pool.emplace_back(&fragments[f].chunk_table[c],
                                  span_lists[f][c]);
            }
        }
        for (const WrittenChunk &chunk : step.announcement.chunk_table)
        {
            bool found = false;
            for (auto &[candidate, span] : pool)
            {
                if (candidate != nullptr && *candidate == chunk)
                {
                    step.spans.push_back(span);
                    candidate = nullptr;
                    found = true;
                    break;
                }
            }
            if (!found)
            {
                throw ContainerError("footer assembly lost a chunk span");
            }
        }
        steps.push_back(std::move(step));
    }
    return steps;
}

codec::Json StepsToJson(const std::vector<ContainerStep> &steps)
{
    codec::Json out = codec::Json::array();
    for (const ContainerStep &step : steps)
    {
        codec::Json spans = codec::Json::array();
        for (const ChunkSpan &span : step.spans)
        {
            spans.push_back(codec::Json{{"o", span.file_offset},
                                        {"l", span.length}});
        }
        out.push_back(codec::Json{
            {"announcement", codec::ToJson(step.announcement)},
            {"spans", std::move(spans)}});
    }
    return out;
}

std::vector<ContainerStep> StepsFromJson(const codec::Json &j,
                                         const char *what)
{
    std::vector<ContainerStep> steps;
    for (const auto &entry : j)
    {
        ContainerStep step;
        step.announcement = codec::AnnouncementFromJson(
            codec::Require(entry, "announcement", what));
        for (const auto &span : codec::Require(entry, "spans", what))
        {
            step.spans.push_back(
                ChunkSpan{codec::RequireU64(span, "o", what),
                          codec::RequireU64(span, "l", what)});
        }
        if (step.spans.size() != step.announcement.chunk_table.size())
        {
            throw ContainerError(
                "footer span count does not match the chunk table");
        }
        steps.push_back(std::move(step));
    }
    return steps;
}

} // end anonymous namespace

std::uint32_t Crc32(const std::uint8_t *data, std::size_t n,
                    std::uint32_t crc)
{
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i)
        {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k)
            {
                c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            }
            t[i] = c;
        }
        return t;
    }();

    crc ^= 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i)
    {
        crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    }
    return crc ^ 0xFFFFFFFFu;
}

std::string ContainerHeader::ToJsonText() const
{
    codec::Json j{{"series", series},
                  {"group_size", group_size},
                  {"file_index", file_index},
                  {"num_files", num_files},
                  {"ranks", ranks}};
    return j.dump();
}

ContainerHeader ContainerHeader::FromJsonText(const std::string &text)
{
    const codec::Json j = codec::Parse(text, "container header");
    ContainerHeader h;
    h.series = codec::RequireString(j, "series", "container header");
    h.group_size = static_cast<std::uint32_t>(
        codec::RequireU64(j, "group_size", "container header"));
    h.file_index = static_cast<std::uint32_t>(
        codec::RequireU64(j, "file_index", "container header"));
    h.num_files = static_cast<std::uint32_t>(
        codec::RequireU64(j, "num_files", "container header"));
    for (const auto &r : codec::Require(j, "ranks", "container header"))
    {
        h.ranks.push_back(r.get<std::uint32_t>());
    }
    return h;
}

std::string ContainerFilePath(const std::string &series,
                              std::uint32_t file_index,
                              std::uint32_t num_files)
{
    if (num_files <= 1)
    {
        return series;
    }
    return series + "." + std::to_string(file_index);
}

ContainerWriter::ContainerWriter(const std::string &path,
                                 const ContainerHeader &header,
                                 double write_mibps)
: m_Header(header), m_Path(path), m_WriteMibps(write_mibps)
{
    // The creation race between the processes sharing this file is
    // settled under a sidecar lock so no process ever observes a file
    // without its header.
    const std::string lock_path = path + ".lock";
    const int lock_fd = ::open(lock_path.c_str(), O_CREAT | O_RDWR, 0644);
    if (lock_fd < 0)
    {
        throw ContainerError("cannot open '" + lock_path +
                             "': " + std::strerror(errno));
    }
    FileLock lock(lock_fd);

    m_Fd = ::open(path.c_str(), O_RDWR, 0644);
    if (m_Fd < 0 && errno == ENOENT)
    {
        m_Fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_RDWR, 0644);
        if (m_Fd >= 0)
        {
            const std::vector<std::uint8_t> bytes = HeaderBytes(m_Header);
            WriteAll(m_Fd, bytes.data(), bytes.size());
            ::fsync(m_Fd);
        }
    }
    else if (m_Fd >= 0)
    {
        ContainerHeader existing = ReadHeader(m_Fd).first;
        if (existing.ToJsonText() != m_Header.ToJsonText())
        {
            ::close(m_Fd);
            m_Fd = -1;
            ::close(lock_fd);
            throw ContainerError("container '" + path +
                                 "' exists with a different identity");
        }
    }
    const int saved = errno;
    ::close(lock_fd);
    if (m_Fd < 0)
    {
        throw ContainerError("cannot create '" + path +
                             "': " + std::strerror(saved));
    }
}

ContainerWriter::~ContainerWriter()
{
    if (m_Fd >= 0)
    {
        ::close(m_Fd);
    }
}

void ContainerWriter::AppendRecord(
    std::uint8_t kind, const std::uint8_t *head, std::size_t head_len,
    const std::vector<std::vector<std::uint8_t>> &tail)
{
    std::uint64_t body_len = head_len;
    for (const auto &part : tail)
    {
        body_len += part.size();
    }

    std::vector<std::uint8_t> framed;
    framed.reserve(RecordFixed + head_len);
    framed.push_back(kind);
    PutU64LE(framed, body_len);
    framed.insert(framed.end(), head, head + head_len);

    std::uint32_t crc = Crc32(framed.data(), framed.size());
    for (const auto &part : tail)
    {
        crc = Crc32(part.data(), part.size(), crc);
    }

    std::vector<std::uint8_t> prefix;
    PutU32LE(prefix, crc);

    FileLock lock(m_Fd);
    if (::lseek(m_Fd, 0, SEEK_END) < 0)
    {
        throw ContainerError(std::string("seek failed: ") +
                             std::strerror(errno));
    }
    WriteAll(m_Fd, prefix.data(), prefix.size());
    WriteAll(m_Fd, framed.data(), framed.size());
    for (const auto &part : tail)
    {
        WriteAll(m_Fd, part.data(), part.size());
    }
    if (m_WriteMibps > 0.0)
    {
        // Model a bandwidth-limited filesystem: hold the appender for
        // the time the record would take at the configured rate.
        const double seconds = static_cast<double>(RecordFixed + body_len) /
                               (m_WriteMibps * 1024.0 * 1024.0);
        std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
    }
    ::fsync(m_Fd);
}

void ContainerWriter::AppendStep(
    const StepAnnouncement &fragment,
    const std::vector<std::vector<std::uint8_t>> &payloads)
{
    if (payloads.size() != fragment.chunk_table.size())
    {
        throw ValidationError("payload count does not match the chunk table");
    }
    for (std::size_t i = 0; i < payloads.size(); ++i)
    {
        const WrittenChunk &chunk = fragment.chunk_table[i];
        const DatasetDecl *decl = fragment.FindDataset(chunk.dataset);
        if (decl == nullptr)
        {
            throw ValidationError("chunk references undeclared dataset '" +
                                  chunk.dataset + "'");
        }
        if (payloads[i].size() != ByteSize(chunk.region, decl->elem_kind))
        {
            throw ValidationError("payload size mismatch for dataset '" +
                                  chunk.dataset + "'");
        }
    }
    const std::vector<std::uint8_t> block = EncodeAnnouncement(fragment);
    AppendRecord(RecordStep, block.data(), block.size(), payloads);
}

bool ContainerWriter::AppendClose(std::uint32_t rank)
{
    const codec::Json j{{"ranks", std::vector<std::uint32_t>{rank}}};
    const std::string body = j.dump();

    FileLock lock(m_Fd);
    {
        std::vector<std::uint8_t> framed;
        framed.push_back(RecordClose);
        PutU64LE(framed, body.size());
        framed.insert(framed.end(), body.begin(), body.end());
        const std::uint32_t crc = Crc32(framed.data(), framed.size());
        std::vector<std::uint8_t> prefix;
        PutU32LE(prefix, crc);
        if (::lseek(m_Fd, 0, SEEK_END) < 0)
        {
            throw ContainerError(std::string("seek failed: ") +
                                 std::strerror(errno));
        }
        WriteAll(m_Fd, prefix.data(), prefix.size());
        WriteAll(m_Fd, framed.data(), framed.size());
        ::fsync(m_Fd);
    }

    // Still under the lock: if every rank of this file has now closed,
    // this process is the last closer and writes the footer.
    const std::uint64_t header_end = ReadHeader(m_Fd).second;
    ScanResult scan = ScanRecords(m_Fd, header_end, /*strict=*/true);
    for (std::uint32_t r : m_Header.ranks)
    {
        if (scan.closed_ranks.count(r) == 0)
        {
            return false;
        }
    }

    const std::vector<ContainerStep> steps = AssembleSteps(scan);
    codec::Json footer{{"series", m_Header.series},
                       {"group_size", m_Header.group_size},
                       {"file_index", m_Header.file_index},
                       {"num_files", m_Header.num_files},
                       {"ranks", m_Header.ranks},
                       {"steps", StepsToJson(steps)}};
    const std::string json = footer.dump();

    std::vector<std::uint8_t> trailer(json.begin(), json.end());
    PutU32LE(trailer, Crc32(reinterpret_cast<const std::uint8_t *>(
                                json.data()),
                            json.size()));
    PutU64LE(trailer, json.size());
    trailer.insert(trailer.end(), ContainerMagic, ContainerMagic + 8);

    if (::lseek(m_Fd, 0, SEEK_END) < 0)
    {
        throw ContainerError(std::string("seek failed: ") +
                             std::strerror(errno));
    }
    WriteAll(m_Fd, trailer.data(), trailer.size());
    ::fsync(m_Fd);
    return true;
}

ContainerReader::ContainerReader(const std::string &path)
{
    m_Fd = ::open(path.c_str(), O_RDONLY);
    if (m_Fd < 0)
    {
        throw ContainerError("cannot open '" + path +
                             "': " + std::strerror(errno));
    }
    try
    {
        std::uint64_t header_end = 0;
        std::tie(m_Header, header_end) = ReadHeader(m_Fd);

        const std::uint64_t size = FileSize(m_Fd);
        if (size < header_end + TrailerFixed)
        {
            throw CorruptFooter("container '" + path + "' has no footer");
        }
        std::array<std::uint8_t, TrailerFixed> fixed;
        PReadAll(m_Fd, size - TrailerFixed, fixed.data(), fixed.size());
        if (std::memcmp(fixed.data() + 12, ContainerMagic, 8) != 0)
        {
            throw CorruptFooter("container '" + path +
                                "' footer magic mismatch");
        }
        const std::uint32_t stored_crc = GetU32LE(fixed.data());
        const std::uint64_t json_len = GetU64LE(fixed.data() + 4);
        if (json_len > size - TrailerFixed - header_end)
        {
            throw CorruptFooter("container '" + path +
                                "' footer length out of range");
        }
        std::string json(json_len, '\0');
        PReadAll(m_Fd, size - TrailerFixed - json_len,
                 reinterpret_cast<std::uint8_t *>(json.data()), json_len);
        if (Crc32(reinterpret_cast<const std::uint8_t *>(json.data()),
                  json.size()) != stored_crc)
        {
            throw CorruptFooter("container '" + path +
                                "' footer checksum mismatch");
        }

        codec::Json j;
        try
        {
            j = codec::Parse(json, "container footer");
            m_Steps = StepsFromJson(
                codec::Require(j, "steps", "container footer"),
                "container footer");
        }
        catch (const Error &e)
        {
            throw CorruptFooter("container '" + path + "': " + e.what());
        }
    }
    catch (...)
    {
        ::close(m_Fd);
        m_Fd = -1;
        throw;
    }
}

ContainerReader::~ContainerReader()
{
    if (m_Fd >= 0)
    {
        ::close(m_Fd);
    }
}

std::vector<ContainerStep> ContainerReader::Recover(const std::string &path)
{
    const int fd = ::open(path.c_str(), O_RDONLY);
    if (fd < 0)
    {
        throw ContainerError("cannot open '" + path +
                             "': " + std::strerror(errno));
    }
    try
    {
        const std::uint64_t header_end = ReadHeader(fd).second;
        ScanResult scan = ScanRecords(fd, header_end, /*strict=*/false);
        std::vector<ContainerStep> steps = AssembleSteps(scan);
        ::close(fd);
        return steps;
    }
    catch (...)
    {
        ::close(fd);
        throw;
    }
}

void ContainerReader::ReadAt(std::uint64_t off, std::uint8_t *out,
                             std::uint64_t len) const
{
    if (!PReadAll(m_Fd, off, out, len))
    {
        throw ContainerError("read past end of container");
    }
}

} // end namespace engine
} // end namespace chunkstream
