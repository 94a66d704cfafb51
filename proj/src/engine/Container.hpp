/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Container.hpp : aggregating step-series container file
 *
 * Layout (all integers little-endian):
 *
 *   header   magic[8] "CHNKSTRM" | u16 version | u64 json_len | json
 *   records  repeated  u32 crc | u8 kind | u64 body_len | body
 *            crc covers kind, body_len, and body
 *            kind 1 = step fragment: announcement block followed by the
 *                     raw chunk payloads in chunk-table order
 *            kind 2 = close: JSON {"ranks": [...]}
 *   trailer  footer_json | u32 crc(footer_json) | u64 footer_len | magic[8]
 *
 * The trailer is suffix-framed so a reader can open the series with a
 * single 20-byte read from the end of the file.  Appends from the
 * processes sharing a file are serialized with flock(2); the process
 * whose close record completes the rank set scans the records and
 * appends the footer.
 *
 */

#ifndef CHUNKSTREAM_CONTAINER_HPP
#define CHUNKSTREAM_CONTAINER_HPP

#include "chunkstream/Core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace chunkstream
{
namespace engine
{

/** CRC-32 (IEEE 802.3, reflected); Crc32("123456789") == 0xCBF43926. */
std::uint32_t Crc32(const std::uint8_t *data, std::size_t n,
                    std::uint32_t crc = 0);

inline constexpr char ContainerMagic[8] = {'C', 'H', 'N', 'K',
                                           'S', 'T', 'R', 'M'};
inline constexpr std::uint16_t ContainerVersion = 1;

inline constexpr std::uint8_t RecordStep = 1;
inline constexpr std::uint8_t RecordClose = 2;

/** Identity of one container file within a series. */
struct ContainerHeader
{
    std::string series;
    std::uint32_t group_size = 1;
    std::uint32_t file_index = 0;
    std::uint32_t num_files = 1;
    std::vector<std::uint32_t> ranks; // writer ranks sharing this file

    std::string ToJsonText() const;
    static ContainerHeader FromJsonText(const std::string &text);
};

/** Byte span of one chunk payload inside the file. */
struct ChunkSpan
{
    std::uint64_t file_offset = 0;
    std::uint64_t length = 0;
};

/** One step as indexed by the footer: the merged announcement plus the
 *  payload spans aligned with its chunk table. */
struct ContainerStep
{
    StepAnnouncement announcement;
    std::vector<ChunkSpan> spans;
};

/** Path of file `file_index` of a series split over `num_files`. */
std::string ContainerFilePath(const std::string &series,
                              std::uint32_t file_index,
                              std::uint32_t num_files);

class ContainerWriter
{
public:
    /** Creates the file with the given header, or opens it when another
     *  process of the same aggregation group won the creation race (the
     *  existing header must agree).  `write_mibps` > 0 throttles every
     *  append to that synthetic bandwidth. */
    ContainerWriter(const std::string &path, const ContainerHeader &header,
                    double write_mibps);
    ~ContainerWriter();

    ContainerWriter(const ContainerWriter &) = delete;
    ContainerWriter &operator=(const ContainerWriter &) = delete;

    /** Appends one step-fragment record; `payloads` parallels
     *  `fragment.chunk_table`. */
    void AppendStep(const StepAnnouncement &fragment,
                    const std::vector<std::vector<std::uint8_t>> &payloads);

    /** Appends a close record for `rank`.  When that completes the
     *  header's rank set this call also builds and appends the footer;
     *  returns true in that case. */
    bool AppendClose(std::uint32_t rank);

    const ContainerHeader &Header() const { return m_Header; }

private:
    void AppendRecord(std::uint8_t kind, const std::uint8_t *head,
                      std::size_t head_len,
                      const std::vector<std::vector<std::uint8_t>> &tail);

    ContainerHeader m_Header;
    std::string m_Path;
    int m_Fd = -1;
    double m_WriteMibps = 0.0;
};

class ContainerReader
{
public:
    /** Opens via the footer; throws CorruptFooter when the trailer is
     *  damaged and ContainerError when the file is not a container. */
    explicit ContainerReader(const std::string &path);
    ~ContainerReader();

    ContainerReader(const ContainerReader &) = delete;
    ContainerReader &operator=(const ContainerReader &) = delete;

    /** Salvages a container whose footer is missing or damaged by
     *  scanning the records, keeping every fragment up to the first
     *  corrupt one. */
    static std::vector<ContainerStep> Recover(const std::string &path);

    const ContainerHeader &Header() const { return m_Header; }
    const std::vector<ContainerStep> &Steps() const { return m_Steps; }

    /** Reads `len` bytes at absolute file offset `off` into `out`. */
    void ReadAt(std::uint64_t off, std::uint8_t *out, std::uint64_t len) const;

private:
    ContainerHeader m_Header;
    std::vector<ContainerStep> m_Steps;
    int m_Fd = -1;
};

} // end namespace engine
} // end namespace chunkstream

#endif /* CHUNKSTREAM_CONTAINER_HPP */
