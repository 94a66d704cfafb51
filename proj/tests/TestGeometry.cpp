/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * TestGeometry.cpp : hyperslab algebra against per-cell brute force
 *
 */

#include "chunkstream/Errors.hpp"
#include "chunkstream/Geometry.hpp"

#include "Oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace chunkstream;
using oracles::CellSetOf;
using oracles::CellsOf;

namespace
{

Region RandomRegion(std::mt19937_64 &rng, std::size_t rank,
                    std::uint64_t max_per_axis)
{
    auto randint = [&rng](std::uint64_t lo, std::uint64_t hi) {
        return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng);
    };
    Region r;
    for (std::size_t axis = 0; axis < rank; ++axis)
    {
        r.offset.push_back(randint(0, max_per_axis));
        r.extent.push_back(randint(1, max_per_axis));
    }
    return r;
}

} // end anonymous namespace

TEST_SUITE_BEGIN("geometry");

TEST_CASE("intersection basics")
{
    const Region a{{0, 0}, {4, 4}};
    const Region b{{2, 0}, {4, 4}};
    const auto i = Intersect(a, b);
    REQUIRE(i);
    CHECK(*i == Region{{2, 0}, {2, 4}});

    // touching half-open intervals are disjoint
    CHECK(!Intersect(Region{{0}, {2}}, Region{{2}, {2}}));

    // idempotence
    const auto self = Intersect(a, a);
    REQUIRE(self);
    CHECK(*self == a);

    CHECK_THROWS_AS(Intersect(Region{{0}, {2}}, a), ValidationError);
}

TEST_CASE("intersection equals brute-force cell intersection")
{
    std::mt19937_64 rng(0xBEEF);
    for (int i = 0; i < 3000; ++i)
    {
        const std::size_t rank =
            std::uniform_int_distribution<std::size_t>(1, 3)(rng);
        const Region a = RandomRegion(rng, rank, 8);
        const Region b = RandomRegion(rng, rank, 8);
        const auto isect = Intersect(a, b);
        const auto isect_rev = Intersect(b, a);

        // commutativity
        CHECK(isect == isect_rev);

        oracles::CellSet expected;
        const auto cells_a = CellSetOf(a);
        for (const auto &cell : CellSetOf(b))
        {
            if (cells_a.count(cell))
            {
                expected.insert(cell);
            }
        }
        if (isect)
        {
            CHECK(CellSetOf(*isect) == expected);
        }
        else
        {
            CHECK(expected.empty());
        }
    }
}

TEST_CASE("axis partitioning examples")
{
    SUBCASE("even split")
    {
        const auto parts = PartitionAxis({8}, 2, 0);
        REQUIRE(parts.size() == 2);
        CHECK(*parts[0] == Region{{0}, {4}});
        CHECK(*parts[1] == Region{{4}, {4}});
    }
    SUBCASE("uneven split puts the larger part first")
    {
        const auto parts = PartitionAxis({7}, 2, 0);
        REQUIRE(parts.size() == 2);
        CHECK(*parts[0] == Region{{0}, {4}});
        CHECK(*parts[1] == Region{{4}, {3}});
    }
    SUBCASE("2-D split along axis 0")
    {
        const auto parts = PartitionAxis({4, 6}, 3, 0);
        REQUIRE(parts.size() == 3);
        CHECK(*parts[0] == Region{{0, 0}, {2, 6}});
        CHECK(*parts[1] == Region{{2, 0}, {1, 6}});
        CHECK(*parts[2] == Region{{3, 0}, {1, 6}});
    }
    SUBCASE("surplus parts are empty-marked")
    {
        const auto parts = PartitionAxis({3}, 5, 0);
        REQUIRE(parts.size() == 5);
        CHECK(parts[0]);
        CHECK(parts[1]);
        CHECK(parts[2]);
        CHECK(!parts[3]);
        CHECK(!parts[4]);
    }
    SUBCASE("errors")
    {
        CHECK_THROWS_AS(PartitionAxis({4, 4}, 2, 2), ValidationError);
        CHECK_THROWS_AS(PartitionAxis({4}, 0, 0), ValidationError);
    }
}

TEST_CASE("axis partitioning tiles the global extent")
{
    std::mt19937_64 rng(0x5EED);
    auto randint = [&rng](std::uint64_t lo, std::uint64_t hi) {
        return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng);
    };
    for (int i = 0; i < 1000; ++i)
    {
        const std::size_t rank = randint(1, 3);
        Extent global;
        for (std::size_t a = 0; a < rank; ++a)
        {
            global.push_back(randint(1, 9));
        }
        const std::size_t axis = randint(0, rank - 1);
        const auto n = static_cast<std::uint32_t>(randint(1, 12));
        const auto parts = PartitionAxis(global, n, axis);
        REQUIRE(parts.size() == n);

        oracles::CellCounts seen;
        std::optional<std::uint64_t> prev_thickness;
        bool prev_empty = false;
        for (const auto &part : parts)
        {
            if (!part)
            {
                prev_empty = true;
                continue;
            }
            // all empties trail the non-empties
            CHECK(!prev_empty);
            if (prev_thickness)
            {
                // sizes never increase and differ by at most one
                CHECK(part->extent[axis] <= *prev_thickness);
                CHECK(part->extent[axis] + 1 >= *prev_thickness);
            }
            prev_thickness = part->extent[axis];
            for (const auto &cell : CellsOf(*part))
            {
                ++seen[cell];
            }
        }
        const Region whole{Offset(rank, 0), global};
        oracles::CellCounts expected;
        for (const auto &cell : CellsOf(whole))
        {
            ++expected[cell];
        }
        CHECK(seen == expected); // cover and disjoint in one comparison
    }
}

TEST_CASE("volume-capped slicing examples")
{
    SUBCASE("fits unchanged")
    {
        const Region r{{1, 2, 3}, {2, 3, 4}};
        const auto pieces = SliceToCap(r, 24);
        REQUIRE(pieces.size() == 1);
        CHECK(pieces[0] == r);
    }
    SUBCASE("1-D chopping")
    {
        const auto pieces = SliceToCap(Region{{0}, {6}}, 2);
        REQUIRE(pieces.size() == 3);
        CHECK(pieces[0] == Region{{0}, {2}});
        CHECK(pieces[1] == Region{{2}, {2}});
        CHECK(pieces[2] == Region{{4}, {2}});
    }
    SUBCASE("2-D slicing under cap 5")
    {
        const Region r{{0, 0}, {3, 4}};
        const auto pieces = SliceToCap(r, 5);
        oracles::CellCounts seen;
        for (const auto &p : pieces)
        {
            CHECK(Volume(p) <= 5);
            for (const auto &cell : CellsOf(p))
            {
                ++seen[cell];
            }
        }
        oracles::CellCounts expected;
        for (const auto &cell : CellsOf(r))
        {
            ++expected[cell];
        }
        CHECK(seen == expected);
    }
    SUBCASE("zero cap is rejected")
    {
        CHECK_THROWS_AS(SliceToCap(Region{{0}, {4}}, 0), ValidationError);
    }
}

TEST_CASE("slicing tiles exactly, respects the cap, avoids fragmentation")
{
    std::mt19937_64 rng(0xCAB);
    auto randint = [&rng](std::uint64_t lo, std::uint64_t hi) {
        return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng);
    };
    for (int i = 0; i < 2000; ++i)
    {
        const std::size_t rank = randint(1, 3);
        const Region r = RandomRegion(rng, rank, rank == 1 ? 40 : 10);
        const std::uint64_t vol = Volume(r);
        const std::uint64_t cap = randint(1, vol + 3);
        const auto pieces = SliceToCap(r, cap);

        REQUIRE(!pieces.empty());
        if (vol <= cap)
        {
            REQUIRE(pieces.size() == 1);
            CHECK(pieces[0] == r);
        }
        // piece count bound: no pathological fragmentation
        CHECK(pieces.size() <= 2 * ((vol + cap - 1) / cap));

        oracles::CellCounts seen;
        for (const auto &p : pieces)
        {
            CHECK(Volume(p) <= cap);
            CHECK(oracles::Contains(r, p));
            for (const auto &cell : CellsOf(p))
            {
                ++seen[cell];
            }
        }
        oracles::CellCounts expected;
        for (const auto &cell : CellsOf(r))
        {
            ++expected[cell];
        }
        CHECK(seen == expected);
    }
}

TEST_CASE("subtraction equals brute-force cell difference")
{
    std::mt19937_64 rng(0xD1FF);
    for (int i = 0; i < 2000; ++i)
    {
        const std::size_t rank =
            std::uniform_int_distribution<std::size_t>(1, 3)(rng);
        const Region a = RandomRegion(rng, rank, 8);
        const Region b = RandomRegion(rng, rank, 8);
        const auto pieces = Subtract(a, b);

        oracles::CellCounts seen;
        for (const auto &p : pieces)
        {
            CHECK(oracles::Contains(a, p));
            for (const auto &cell : CellsOf(p))
            {
                ++seen[cell];
            }
        }
        const auto cells_b = CellSetOf(b);
        oracles::CellCounts expected;
        for (const auto &cell : CellsOf(a))
        {
            if (!cells_b.count(cell))
            {
                ++expected[cell];
            }
        }
        CHECK(seen == expected);
    }
}

TEST_SUITE_END();
