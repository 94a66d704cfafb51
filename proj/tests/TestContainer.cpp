/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * TestContainer.cpp : aggregating container file format — framing,
 *                     checksums, footer recovery, identity checks
 *
 */

#include "chunkstream/Core.hpp"
#include "chunkstream/Errors.hpp"

#include "engine/Container.hpp"

#include "TestSupport.hpp"

#include <doctest.h>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <unistd.h>

using namespace chunkstream;
using namespace chunkstream::engine;
using testsupport::Pattern;
using testsupport::ScratchDir;

namespace
{

StepAnnouncement MakeFragment(std::uint64_t step, std::uint32_t rank,
                              std::uint64_t rows)
{
    StepAnnouncement s;
    s.step_index = step;
    DatasetDecl d;
    d.name = "density";
    d.elem_kind = ElemKind::UInt8;
    d.global_extent = {8, 4};
    s.datasets.push_back(d);
    WrittenChunk c;
    c.dataset = "density";
    c.region = Region{{rank * rows, 0}, {rows, 4}};
    c.producer_rank = rank;
    c.hostname = "host0";
    s.chunk_table.push_back(c);
    s.attributes["phase"] = static_cast<std::int64_t>(step);
    return s;
}

std::uint64_t FileBytes(const std::string &path)
{
    return std::filesystem::file_size(path);
}

void Truncate(const std::string &path, std::uint64_t new_size)
{
    REQUIRE(::truncate(path.c_str(), static_cast<off_t>(new_size)) == 0);
}

} // end anonymous namespace

TEST_SUITE("container")
{
    TEST_CASE("the checksum matches the published CRC-32 check value")
    {
        const char *vector = "123456789";
        CHECK(Crc32(reinterpret_cast<const std::uint8_t *>(vector), 9) ==
              0xCBF43926u);
        // incremental feeding gives the same digest
        const std::uint32_t partial =
            Crc32(reinterpret_cast<const std::uint8_t *>(vector), 4);
        CHECK(Crc32(reinterpret_cast<const std::uint8_t *>(vector) + 4, 5,
                    partial) == 0xCBF43926u);
        CHECK(Crc32(nullptr, 0) == 0u);
    }

    TEST_CASE("a single-file series keeps the bare series name")
    {
        CHECK(ContainerFilePath("run/fields.bin", 0, 1) == "run/fields.bin");
        CHECK(ContainerFilePath("run/fields.bin", 0, 3) == "run/fields.bin.0");
        CHECK(ContainerFilePath("run/fields.bin", 2, 3) == "run/fields.bin.2");
    }

    TEST_CASE("steps and payloads survive the write/read round trip")
    {
        ScratchDir dir("container");
        const std::string path = dir.File("series.bin");

        ContainerHeader header;
        header.series = path;
        header.group_size = 1;
        header.ranks = {0};

        const auto payload0 = Pattern(7, 16);
        const auto payload1 = Pattern(8, 16);
        {
            ContainerWriter writer(path, header, 0.0);
            writer.AppendStep(MakeFragment(0, 0, 4), {payload0});
            writer.AppendStep(MakeFragment(1, 0, 4), {payload1});
            CHECK(writer.AppendClose(0));
        }

        ContainerReader reader(path);
        CHECK(reader.Header().series == path);
        CHECK(reader.Header().group_size == 1);
        REQUIRE(reader.Steps().size() == 2);

        const ContainerStep &s0 = reader.Steps()[0];
        CHECK(s0.announcement.step_index == 0);
        REQUIRE(s0.announcement.chunk_table.size() == 1);
        CHECK(s0.announcement.chunk_table[0].dataset == "density");
        REQUIRE(s0.spans.size() == 1);
        CHECK(s0.spans[0].length == 16);

        std::vector<std::uint8_t> got(16);
        reader.ReadAt(s0.spans[0].file_offset, got.data(), 16);
        CHECK(got == payload0);

        const ContainerStep &s1 = reader.Steps()[1];
        reader.ReadAt(s1.spans[0].file_offset, got.data(), 16);
        CHECK(got == payload1);
        CHECK(std::get<std::int64_t>(
                  s1.announcement.attributes.at("phase")) == 1);

        CHECK_THROWS_AS(reader.ReadAt(FileBytes(path), got.data(), 16),
                        ContainerError);
    }

    TEST_CASE("the footer appears only after every sharing rank closes")
    {
        ScratchDir dir("container");
        const std::string path = dir.File("series.bin");

        ContainerHeader header;
        header.series = path;
        header.group_size = 2;
        header.ranks = {0, 1};

        ContainerWriter w0(path, header, 0.0);
        ContainerWriter w1(path, header, 0.0);
        w0.AppendStep(MakeFragment(0, 0, 4), {Pattern(1, 16)});
        w1.AppendStep(MakeFragment(0, 1, 4), {Pattern(2, 16)});

        CHECK_FALSE(w0.AppendClose(0));
        // one close record is not a footer: the file still opens only
        // through recovery
        CHECK_THROWS_AS(ContainerReader{path}, CorruptFooter);

        CHECK(w1.AppendClose(1));
        ContainerReader reader(path);
        REQUIRE(reader.Steps().size() == 1);
        // fragments from both ranks merged into one step
        CHECK(reader.Steps()[0].announcement.chunk_table.size() == 2);
        CHECK(reader.Steps()[0].spans.size() == 2);
    }

    TEST_CASE("a truncated footer is reported and recovery salvages the steps")
    {
        ScratchDir dir("container");
        const std::string path = dir.File("series.bin");

        ContainerHeader header;
        header.series = path;
        header.ranks = {0};

        const auto payload0 = Pattern(3, 32);
        const auto payload1 = Pattern(4, 32);
        {
            ContainerWriter writer(path, header, 0.0);
            writer.AppendStep(MakeFragment(0, 0, 8), {payload0});
            writer.AppendStep(MakeFragment(1, 0, 8), {payload1});
            CHECK(writer.AppendClose(0));
        }

        // chop the footer: opening now fails loudly ...
        Truncate(path, FileBytes(path) - 16);
        CHECK_THROWS_AS(ContainerReader{path}, CorruptFooter);

        // ... but a record scan still yields both steps, bit-exact
        const std::vector<ContainerStep> steps = ContainerReader::Recover(path);
        REQUIRE(steps.size() == 2);
        CHECK(steps[0].announcement.step_index == 0);
        CHECK(steps[1].announcement.step_index == 1);

        // re-open raw to compare payload bytes
        std::ifstream in(path, std::ios::binary);
        REQUIRE(steps[1].spans.size() == 1);
        in.seekg(static_cast<std::streamoff>(steps[1].spans[0].file_offset));
        std::vector<std::uint8_t> got(32);
        in.read(reinterpret_cast<char *>(got.data()), 32);
        CHECK(got == payload1);
    }

    TEST_CASE("recovery also reads an intact container and a torn record")
    {
        ScratchDir dir("container");
        const std::string path = dir.File("series.bin");

        ContainerHeader header;
        header.series = path;
        header.ranks = {0};
        std::uint64_t header_bytes = 0;
        {
            ContainerWriter writer(path, header, 0.0);
            header_bytes = FileBytes(path);
            writer.AppendStep(MakeFragment(0, 0, 8), {Pattern(5, 32)});
            CHECK(writer.AppendClose(0));
        }
        CHECK(ContainerReader::Recover(path).size() == 1);

        // tear the file in the middle of the first record: nothing
        // salvageable remains, but recovery still answers
        Truncate(path, header_bytes + 10);
        CHECK(ContainerReader::Recover(path).empty());
    }

    TEST_CASE("a second writer with a different identity is rejected")
    {
        ScratchDir dir("container");
        const std::string path = dir.File("series.bin");

        ContainerHeader header;
        header.series = path;
        header.group_size = 2;
        header.ranks = {0, 1};
        ContainerWriter w0(path, header, 0.0);

        ContainerHeader other = header;
        other.group_size = 4;
        CHECK_THROWS_AS((ContainerWriter{path, other, 0.0}), ContainerError);

        // the same identity joins fine
        CHECK_NOTHROW((ContainerWriter{path, header, 0.0}));
    }

    TEST_CASE("a non-container file is refused outright")
    {
        ScratchDir dir("container");
        const std::string path = dir.File("not-a-container.bin");
        {
            std::ofstream out(path, std::ios::binary);
            out << "this is just some text, longer than a trailer";
        }
        CHECK_THROWS_AS(ContainerReader{path}, ContainerError);
        CHECK_THROWS_AS(ContainerReader::Recover(path), ContainerError);
    }

    TEST_CASE("a synthetic bandwidth cap slows appends down")
    {
        ScratchDir dir("container");
        const std::string path = dir.File("series.bin");

        ContainerHeader header;
        header.series = path;
        header.ranks = {0};

        // 1 MiB at 8 MiB/s must take at least ~125 ms
        ContainerWriter writer(path, header, 8.0);
        StepAnnouncement frag = MakeFragment(0, 0, 8);
        frag.datasets[0].global_extent = {8, 131072};
        frag.chunk_table[0].region = Region{{0, 0}, {8, 131072}};
        const auto t0 = std::chrono::steady_clock::now();
        writer.AppendStep(frag, {Pattern(6, 8 * 131072)});
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                          t0)
                .count();
        CHECK(elapsed >= 0.1);
        CHECK(writer.AppendClose(0));
    }
}
