/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * TestEngine.cpp : the engine-neutral Writer/Reader facade — bracketing
 *                  rules, stitching, aggregation, and the guarantee that
 *                  the same program text runs against either engine
 *
 */

#include "chunkstream/Announcement.hpp"
#include "chunkstream/Engine.hpp"
#include "chunkstream/Errors.hpp"

#include "TestSupport.hpp"

#include <doctest.h>

#include <filesystem>
#include <map>

using namespace chunkstream;
using testsupport::Pattern;
using testsupport::ScratchDir;
using testsupport::ThreadGroup;

namespace
{

GroupSpec MakeGroup(std::uint32_t rank, std::uint32_t size,
                    const std::string &name = "readers")
{
    GroupSpec g;
    g.rank = rank;
    g.group_size = size;
    g.group_name = name;
    return g;
}

/** Everything a consumer observed, for cross-engine comparison. */
struct Observed
{
    std::vector<std::vector<std::uint8_t>> announcements; // canonical bytes
    std::vector<std::vector<std::uint8_t>> whole_domain;
};

/** The producer/consumer program used against both engines, verbatim:
 *  two writer ranks, three steps, one reader. */
Observed RunScenario(const std::string &series, const EngineConfig &cfg)
{
    constexpr std::uint32_t kWriters = 2;
    constexpr std::uint64_t kSteps = 3;

    auto writer_body = [&](std::uint32_t rank) {
        Writer w = OpenWriter(series, MakeGroup(rank, kWriters, "w"), cfg);
        DatasetDecl d{"b_field", ElemKind::Float32, {4, 6}};
        for (std::uint64_t s = 0; s < kSteps; ++s)
        {
            w.BeginStep();
            w.SetAttribute("iteration",
                           AttributeValue{static_cast<std::int64_t>(s)});
            const Region r{{rank * 2ull, 0ull}, {2ull, 6ull}};
            w.PutChunk(d, r, Pattern(rank * 100 + s, 2 * 6 * 4));
            (void)w.EndStep();
        }
        w.Close();
    };

    Observed obs;
    auto reader_body = [&] {
        Reader r = OpenReader(series, MakeGroup(0, 1), cfg);
        while (auto ann = r.NextStep())
        {
            obs.announcements.push_back(EncodeAnnouncement(*ann));
            obs.whole_domain.push_back(
                r.GetRegion("b_field", Region{{0, 0}, {4, 6}}));
            r.ReleaseStep();
        }
        r.Close();
    };

    ThreadGroup threads;
    for (std::uint32_t rank = 0; rank < kWriters; ++rank)
    {
        threads.Spawn([&, rank] { writer_body(rank); });
    }
    if (cfg.engine == EngineKind::Stream)
    {
        threads.Spawn(reader_body);
        threads.Join();
    }
    else
    {
        threads.Join(); // file engine: writers complete, then read
        reader_body();
    }
    return obs;
}

} // end anonymous namespace

TEST_SUITE("engine")
{
    TEST_CASE("the same program text observes identical steps on either "
              "engine")
    {
        ScratchDir dir("engine");

        EngineConfig file_cfg;
        file_cfg.engine = EngineKind::File;
        file_cfg.aggregation_group = 2;

        EngineConfig stream_cfg;
        stream_cfg.engine = EngineKind::Stream;
        stream_cfg.contact_path = dir.File("swap.contact");
        stream_cfg.queue_policy = QueuePolicy::Block;

        const Observed via_file = RunScenario(dir.File("swap.bin"), file_cfg);
        const Observed via_stream = RunScenario("swap", stream_cfg);

        REQUIRE(via_file.announcements.size() == 3);
        REQUIRE(via_stream.announcements.size() == 3);
        for (std::size_t s = 0; s < 3; ++s)
        {
            // canonical announcement bytes and stitched payloads agree
            // bit-exactly across engines
            CHECK(via_file.announcements[s] == via_stream.announcements[s]);
            CHECK(via_file.whole_domain[s] == via_stream.whole_domain[s]);
        }
    }

    TEST_CASE("step bracketing and payload validation catch misuse")
    {
        ScratchDir dir("engine");
        EngineConfig cfg; // file engine

        Writer w = OpenWriter(dir.File("rules.bin"), MakeGroup(0, 1, "w"),
                              cfg);
        DatasetDecl d{"density", ElemKind::UInt8, {4, 4}};

        CHECK_THROWS_AS(w.EndStep(), ValidationError);
        CHECK_THROWS_AS(w.PutChunk(d, Region{{0, 0}, {2, 4}},
                                   Pattern(0, 8)),
                        ValidationError);

        w.BeginStep();
        CHECK_THROWS_AS(w.BeginStep(), ValidationError);

        // payload size must match the region exactly
        CHECK_THROWS_AS(w.PutChunk(d, Region{{0, 0}, {2, 4}}, Pattern(0, 7)),
                        ValidationError);
        // chunk must stay inside the declared extent
        CHECK_THROWS_AS(w.PutChunk(d, Region{{3, 0}, {2, 4}},
                                   Pattern(0, 8)),
                        ValidationError);
        // rank mismatch between chunk and declaration
        CHECK_THROWS_AS(w.PutChunk(d, Region{{0}, {8}}, Pattern(0, 8)),
                        ValidationError);

        w.PutChunk(d, Region{{0, 0}, {2, 4}}, Pattern(1, 8));
        // the same region twice in one step is a duplicate
        CHECK_THROWS_AS(w.PutChunk(d, Region{{0, 0}, {2, 4}}, Pattern(2, 8)),
                        ValidationError);

        // redeclaring with a different shape is a conflict
        DatasetDecl wrong = d;
        wrong.global_extent = {8, 8};
        CHECK_THROWS_AS(w.Declare(wrong), ValidationError);
        CHECK_NOTHROW(w.Declare(d)); // identical redeclaration is fine

        CHECK_THROWS_AS(w.SetAttribute("", AttributeValue{std::int64_t{1}}),
                        ValidationError);

        // a step is open: closing now would lose it
        CHECK_THROWS_AS(w.Close(), ValidationError);
        CHECK(w.EndStep() == StepOutcome::Written);

        // explicit step indices must increase
        w.BeginStep(5);
        (void)w.EndStep();
        CHECK_THROWS_AS(w.BeginStep(5), ValidationError);
        CHECK_THROWS_AS(w.BeginStep(3), ValidationError);
        w.BeginStep(9);
        (void)w.EndStep();
        w.Close();
        CHECK_NOTHROW(w.Close()); // idempotent

        // the reader sees exactly the indices that were written
        Reader r = OpenReader(dir.File("rules.bin"), MakeGroup(0, 1), cfg);
        CHECK_THROWS_AS(r.Current(), ValidationError);
        std::vector<std::uint64_t> indices;
        while (auto ann = r.NextStep())
        {
            indices.push_back(ann->step_index);
        }
        CHECK(indices == std::vector<std::uint64_t>{0, 5, 9});
        r.Close();
    }

    TEST_CASE("reads outside the written chunks are errors, not zeros")
    {
        ScratchDir dir("engine");
        EngineConfig cfg;
        const std::string series = dir.File("holes.bin");

        {
            Writer w = OpenWriter(series, MakeGroup(0, 1, "w"), cfg);
            DatasetDecl d{"density", ElemKind::UInt8, {4, 4}};
            w.BeginStep();
            w.PutChunk(d, Region{{0, 0}, {2, 4}}, Pattern(1, 8)); // top half
            (void)w.EndStep();
            w.Close();
        }

        Reader r = OpenReader(series, MakeGroup(0, 1), cfg);
        REQUIRE(r.NextStep().has_value());

        CHECK(r.GetRegion("density", Region{{0, 0}, {2, 4}}) ==
              Pattern(1, 8));
        // any touched-but-unwritten cell fails the whole request
        CHECK_THROWS_AS(r.GetRegion("density", Region{{0, 0}, {4, 4}}),
                        UnavailableRegion);
        CHECK_THROWS_AS(r.GetRegion("density", Region{{2, 0}, {1, 1}}),
                        UnavailableRegion);
        CHECK_THROWS_AS(r.GetRegion("ghost", Region{{0, 0}, {1, 1}}),
                        ValidationError);
        // an empty region is trivially satisfiable
        CHECK(r.GetRegion("density", Region{{0, 0}, {0, 4}}).empty());

        r.ReleaseStep();
        CHECK_THROWS_AS(r.GetRegion("density", Region{{0, 0}, {2, 4}}),
                        ValidationError);
        r.Close();
    }

    TEST_CASE("a partial overlap is stitched from both contributing chunks")
    {
        ScratchDir dir("engine");
        EngineConfig cfg;
        const std::string series = dir.File("stitch.bin");

        const auto top = Pattern(10, 8);    // rows 0..1
        const auto bottom = Pattern(20, 8); // rows 2..3
        {
            Writer w = OpenWriter(series, MakeGroup(0, 1, "w"), cfg);
            DatasetDecl d{"density", ElemKind::UInt8, {4, 4}};
            w.BeginStep();
            w.PutChunk(d, Region{{0, 0}, {2, 4}}, top);
            w.PutChunk(d, Region{{2, 0}, {2, 4}}, bottom);
            (void)w.EndStep();
            w.Close();
        }

        Reader r = OpenReader(series, MakeGroup(0, 1), cfg);
        REQUIRE(r.NextStep().has_value());

        // a window straddling the chunk boundary: row 1 from the first
        // chunk, row 2 from the second, columns 1..2 of each
        const auto window = r.GetRegion("density", Region{{1, 1}, {2, 2}});
        REQUIRE(window.size() == 4);
        CHECK(window[0] == top[4 + 1]);    // (1,1)
        CHECK(window[1] == top[4 + 2]);    // (1,2)
        CHECK(window[2] == bottom[0 + 1]); // (2,1)
        CHECK(window[3] == bottom[0 + 2]); // (2,2)
        r.Close();
    }

    TEST_CASE("aggregation groups split a series into the expected files")
    {
        namespace fs = std::filesystem;
        ScratchDir dir("engine");

        SUBCASE("four ranks, two per file")
        {
            EngineConfig cfg;
            cfg.aggregation_group = 2;
            const std::string series = dir.File("split.bin");

            ThreadGroup threads;
            for (std::uint32_t rank = 0; rank < 4; ++rank)
            {
                threads.Spawn([&, rank] {
                    Writer w =
                        OpenWriter(series, MakeGroup(rank, 4, "w"), cfg);
                    DatasetDecl d{"density", ElemKind::UInt8, {8}};
                    w.BeginStep();
                    w.PutChunk(d, Region{{rank * 2ull}, {2ull}},
                               Pattern(rank, 2));
                    (void)w.EndStep();
                    w.Close();
                });
            }
            threads.Join();

            CHECK(fs::exists(series + ".0"));
            CHECK(fs::exists(series + ".1"));
            CHECK_FALSE(fs::exists(series));

            // the reader merges the files back into whole steps
            Reader r = OpenReader(series, MakeGroup(0, 1), cfg);
            REQUIRE(r.NextStep().has_value());
            CHECK(r.Current().chunk_table.size() == 4);
            std::vector<std::uint8_t> expect;
            for (std::uint32_t rank = 0; rank < 4; ++rank)
            {
                const auto part = Pattern(rank, 2);
                expect.insert(expect.end(), part.begin(), part.end());
            }
            CHECK(r.GetRegion("density", Region{{0}, {8}}) == expect);
            r.Close();
        }

        SUBCASE("a group-sized aggregate is one bare file")
        {
            EngineConfig cfg;
            cfg.aggregation_group = 6;
            const std::string series = dir.File("whole.bin");

            ThreadGroup threads;
            for (std::uint32_t rank = 0; rank < 6; ++rank)
            {
                threads.Spawn([&, rank] {
                    Writer w =
                        OpenWriter(series, MakeGroup(rank, 6, "w"), cfg);
                    DatasetDecl d{"density", ElemKind::UInt8, {6}};
                    w.BeginStep();
                    w.PutChunk(d, Region{{rank}, {1}}, Pattern(rank, 1));
                    (void)w.EndStep();
                    w.Close();
                });
            }
            threads.Join();

            CHECK(fs::exists(series));
            CHECK_FALSE(fs::exists(series + ".0"));

            Reader r = OpenReader(series, MakeGroup(0, 1), cfg);
            REQUIRE(r.NextStep().has_value());
            CHECK(r.Current().chunk_table.size() == 6);
            r.Close();
        }
    }

    TEST_CASE("a reader group shares one step via the configured strategy")
    {
        ScratchDir dir("engine");
        EngineConfig cfg;
        cfg.strategy.kind = StrategyKind::Hyperslabs;
        const std::string series = dir.File("shared.bin");

        {
            Writer w = OpenWriter(series, MakeGroup(0, 1, "w"), cfg);
            DatasetDecl d{"density", ElemKind::UInt8, {8, 4}};
            w.BeginStep();
            w.PutChunk(d, Region{{0, 0}, {8, 4}}, Pattern(5, 32));
            (void)w.EndStep();
            w.Close();
        }

        std::map<std::uint32_t, std::vector<ChunkSlab>> slabs;
        std::map<std::uint32_t, std::vector<std::uint8_t>> gathered;
        std::mutex mu;
        ThreadGroup threads;
        for (std::uint32_t rank = 0; rank < 2; ++rank)
        {
            threads.Spawn([&, rank] {
                Reader r = OpenReader(series, MakeGroup(rank, 2), cfg);
                if (!r.NextStep())
                {
                    throw Error("test: expected a step");
                }
                std::vector<std::uint8_t> mine;
                for (const ChunkSlab &slab : r.AssignedSlabs())
                {
                    const auto part =
                        r.GetRegion("density", slab.region);
                    mine.insert(mine.end(), part.begin(), part.end());
                }
                std::lock_guard<std::mutex> lock(mu);
                slabs[rank] = r.AssignedSlabs();
                gathered[rank] = std::move(mine);
                r.Close();
            });
        }
        threads.Join();

        // the two members split the rows; together they cover everything
        REQUIRE(slabs[0].size() == 1);
        REQUIRE(slabs[1].size() == 1);
        CHECK(slabs[0][0].region == Region{{0, 0}, {4, 4}});
        CHECK(slabs[1][0].region == Region{{4, 0}, {4, 4}});
        const auto all = Pattern(5, 32);
        CHECK(gathered[0] ==
              std::vector<std::uint8_t>(all.begin(), all.begin() + 16));
        CHECK(gathered[1] ==
              std::vector<std::uint8_t>(all.begin() + 16, all.end()));
    }

    TEST_CASE("file readers validate a provided roster")
    {
        ScratchDir dir("engine");
        EngineConfig cfg;
        const std::string series = dir.File("roster.bin");
        {
            Writer w = OpenWriter(series, MakeGroup(0, 1, "w"), cfg);
            DatasetDecl d{"density", ElemKind::UInt8, {4}};
            w.BeginStep();
            w.PutChunk(d, Region{{0}, {4}}, Pattern(0, 4));
            (void)w.EndStep();
            w.Close();
        }

        GroupSpec group = MakeGroup(0, 2);
        group.members = {RankMeta{1, "hostA"}}; // rank 0 itself is missing
        CHECK_THROWS_AS(OpenReader(series, group, cfg), ConfigError);

        group.members = {RankMeta{0, "hostA"}, RankMeta{1, "hostB"}};
        ThreadGroup threads;
        threads.Spawn([&] {
            Reader other = OpenReader(
                series,
                [] {
                    GroupSpec g = MakeGroup(1, 2);
                    g.members = {RankMeta{0, "hostA"}, RankMeta{1, "hostB"}};
                    return g;
                }(),
                cfg);
            while (other.NextStep())
            {
                other.ReleaseStep();
            }
            other.Close();
        });
        Reader r = OpenReader(series, group, cfg);
        CHECK(r.GroupMembers().size() == 2);
        CHECK(r.GroupMembers()[1].hostname == "hostB");
        r.Close();
        threads.Join();
    }

    TEST_CASE("a reader group larger than the chunk count still works")
    {
        ScratchDir dir("engine");
        EngineConfig cfg;
        cfg.strategy.kind = StrategyKind::RoundRobin;
        const std::string series = dir.File("sparse.bin");
        {
            Writer w = OpenWriter(series, MakeGroup(0, 1, "w"), cfg);
            DatasetDecl d{"density", ElemKind::UInt8, {4}};
            w.BeginStep();
            w.PutChunk(d, Region{{0}, {4}}, Pattern(0, 4));
            (void)w.EndStep();
            w.Close();
        }

        std::map<std::uint32_t, std::size_t> slab_counts;
        std::mutex mu;
        ThreadGroup threads;
        for (std::uint32_t rank = 0; rank < 3; ++rank)
        {
            threads.Spawn([&, rank] {
                Reader r = OpenReader(series, MakeGroup(rank, 3), cfg);
                if (!r.NextStep())
                {
                    throw Error("test: expected a step");
                }
                std::lock_guard<std::mutex> lock(mu);
                slab_counts[rank] = r.AssignedSlabs().size();
                r.Close();
            });
        }
        threads.Join();

        CHECK(slab_counts[0] == 1); // round robin: chunk 0 -> reader 0
        CHECK(slab_counts[1] == 0);
        CHECK(slab_counts[2] == 0);
    }
}
