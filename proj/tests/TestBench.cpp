/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * TestBench.cpp : benchmark metrics (against hand-computed oracles) and
 *                 the multi-process harness
 *
 */

#include "chunkstream/Bench.hpp"
#include "chunkstream/BenchMetrics.hpp"
#include "chunkstream/Errors.hpp"

#include "TestSupport.hpp"

#include <doctest.h>

#include <filesystem>
#include <string>
#include <vector>

using namespace chunkstream;
using testsupport::ScratchDir;

TEST_SUITE("benchmetrics")
{
    TEST_CASE("perceived throughput is bytes over the slowest rank")
    {
        // Two ranks store 100 B each, in 1 s and 2 s: the application
        // waits for the slower one, so it perceives 100 B/s.
        std::vector<Sample> dump{
            Sample{SampleRole::Store, 0, 0, 100, 1.0},
            Sample{SampleRole::Store, 0, 1, 100, 2.0},
        };
        CHECK(PerceivedThroughput(dump) == doctest::Approx(100.0));

        dump[1].seconds = 0.5; // now rank 0 dominates
        CHECK(PerceivedThroughput(dump) == doctest::Approx(200.0));

        CHECK_THROWS_AS(PerceivedThroughput(std::vector<Sample>{}),
                        ValidationError);
        std::vector<Sample> stuckless{Sample{SampleRole::Store, 0, 0, 8, 0.0}};
        CHECK_THROWS_AS(PerceivedThroughput(stuckless), ValidationError);
    }

    TEST_CASE("quantiles interpolate between order statistics")
    {
        const std::vector<double> sorted{1.0, 2.0, 3.0, 4.0, 100.0};
        CHECK(Quantile(sorted, 0.0) == 1.0);
        CHECK(Quantile(sorted, 1.0) == 100.0);
        CHECK(Quantile(sorted, 0.5) == 3.0);
        CHECK(Quantile(sorted, 0.25) == 2.0);
        CHECK(Quantile(sorted, 0.75) == 4.0);

        const std::vector<double> pair{10.0, 20.0};
        CHECK(Quantile(pair, 0.5) == 15.0);
        CHECK(Quantile(pair, 0.25) == 12.5);

        CHECK_THROWS_AS(Quantile(std::vector<double>{}, 0.5),
                        ValidationError);
        CHECK_THROWS_AS(Quantile(sorted, 1.5), ValidationError);
    }

    TEST_CASE("whisker statistics cap the whiskers at 1.5 IQR")
    {
        // Oracle, computed by hand: quartiles of {1,2,3,4,100} are
        // q1=2, median=3, q3=4; IQR=2, so the upper fence is 4+3=7.
        // The largest in-fence sample is 4; 100 is an outlier.
        WhiskerStats stats =
            ComputeWhiskerStats({100.0, 1.0, 3.0, 2.0, 4.0});
        CHECK(stats.median == 3.0);
        CHECK(stats.q1 == 2.0);
        CHECK(stats.q3 == 4.0);
        CHECK(stats.lower_whisker == 1.0);
        CHECK(stats.upper_whisker == 4.0);
        REQUIRE(stats.outliers.size() == 1);
        CHECK(stats.outliers[0] == 100.0);

        WhiskerStats tight = ComputeWhiskerStats({5.0});
        CHECK(tight.median == 5.0);
        CHECK(tight.lower_whisker == 5.0);
        CHECK(tight.upper_whisker == 5.0);
        CHECK(tight.outliers.empty());

        CHECK_THROWS_AS(ComputeWhiskerStats({}), ValidationError);
    }

    TEST_CASE("sample CSV round trip")
    {
        std::vector<Sample> samples{
            Sample{SampleRole::Store, 3, 1, 4096, 0.25},
            Sample{SampleRole::Load, 3, 0, 1024, 0.015625},
        };
        const std::string text = ToCsv(samples);
        CHECK(text.rfind("role,step,rank,bytes,seconds\n", 0) == 0);
        CHECK(SamplesFromCsv(text) == samples);

        CHECK_THROWS_AS(SamplesFromCsv("nonsense\n"), ValidationError);
        CHECK_THROWS_AS(
            SamplesFromCsv("role,step,rank,bytes,seconds\nstore,1,2\n"),
            ValidationError);
        CHECK_THROWS_AS(
            SamplesFromCsv("role,step,rank,bytes,seconds\nspin,1,2,3,4\n"),
            ValidationError);
    }

    TEST_CASE("plan JSON round trip and validation")
    {
        BenchPlan plan;
        plan.writers = 3;
        plan.readers = 2;
        plan.writer_bytes = {1024, 2048, 512};
        plan.steps_per_writer = 7;
        plan.compute_delay_ms = 5;
        plan.duration_s = 1.5;
        plan.repetitions = 2;
        plan.engine.engine = EngineKind::Stream;
        plan.engine.contact_path = "contact.json";
        plan.sink = PipeSink{"drain", EngineConfig{}};
        plan.topology = {
            BenchHost{"nodeA", {0, 1}, {0}},
            BenchHost{"nodeB", {2}, {1}},
        };
        plan.Validate();

        const BenchPlan parsed = BenchPlan::FromJsonText(plan.ToJsonText());
        CHECK(parsed.writers == 3);
        CHECK(parsed.writer_bytes == plan.writer_bytes);
        CHECK(parsed.steps_per_writer == 7);
        CHECK(parsed.duration_s == 1.5);
        CHECK(parsed.engine.engine == EngineKind::Stream);
        REQUIRE(parsed.sink.has_value());
        CHECK(parsed.sink->series == "drain");
        REQUIRE(parsed.topology.size() == 2);
        CHECK(parsed.topology[1].hostname == "nodeB");
        CHECK(parsed.topology[1].writer_ranks ==
              std::vector<std::uint32_t>{2});

        CHECK(parsed.WriterBytes(1) == 2048);
        CHECK(parsed.WriterOffset(2) == 3072);
        CHECK(parsed.TotalStepBytes() == 3584);
        CHECK(parsed.HostOf(2, true) == "nodeB");
        CHECK(parsed.HostOf(0, false) == "nodeA");
        CHECK(parsed.HostOf(5, true) == "");

        // A stream plan without a contact path is fine: one is assigned
        // per repetition.
        BenchPlan bare;
        bare.steps_per_writer = 1;
        bare.engine.engine = EngineKind::Stream;
        bare.Validate();

        auto reject = [](void (*mutate)(BenchPlan &))
        {
            BenchPlan broken;
            broken.steps_per_writer = 2;
            mutate(broken);
            CHECK_THROWS_AS(broken.Validate(), ConfigError);
        };
        reject([](BenchPlan &p) { p.writers = 0; });
        reject([](BenchPlan &p) { p.writer_bytes = {1, 2}; });
        reject([](BenchPlan &p) { p.steps_per_writer = 0; });
        reject([](BenchPlan &p) { p.duration_s = 0.0; });
        reject([](BenchPlan &p) { p.repetitions = 0; });
        reject([](BenchPlan &p) { p.series.clear(); });
        reject([](BenchPlan &p)
               { p.sink = PipeSink{p.series, EngineConfig{}}; });
        reject([](BenchPlan &p)
               {
                   p.readers = 0;
                   p.sink = PipeSink{"drain", EngineConfig{}};
               });
        reject([](BenchPlan &p)
               { p.topology = {BenchHost{"a", {0, 0}, {}}}; });
        reject([](BenchPlan &p)
               { p.topology = {BenchHost{"a", {0}, {0}}}; });

        CHECK_THROWS_AS(BenchPlan::FromJsonText("]["), ConfigError);

        // Derived step counts fill the window at the compute cadence.
        BenchPlan derived;
        derived.compute_delay_ms = 250;
        derived.duration_s = 10.0;
        CHECK(derived.StepsPerWriter() == 40);
    }

    TEST_CASE("empty step counts are underdetermined, derived otherwise")
    {
        BenchPlan plan;
        plan.steps_per_writer = 12;
        CHECK(plan.StepsPerWriter() == 12);
    }
}

TEST_SUITE("bench")
{
    TEST_CASE("harness runs a container plan and aggregates the results")
    {
        ScratchDir dir("bench-file");
        BenchPlan plan;
        plan.writers = 2;
        plan.readers = 1;
        plan.bytes_per_writer_per_step = 4096;
        plan.steps_per_writer = 3;
        plan.compute_delay_ms = 10;
        plan.duration_s = 2.0;
        plan.repetitions = 1;
        plan.engine.engine = EngineKind::File;
        plan.engine.aggregation_group = 2;

        const BenchReport report =
            RunBench(plan, dir.File("out"), CHUNKSTREAM_BENCH_EXE);

        CHECK_FALSE(report.failed);
        REQUIRE(report.repetitions.size() == 1);
        const RepetitionReport &rep = report.repetitions[0];
        CHECK(rep.writer_steps == 3);
        CHECK(rep.dumps_completed == 3);
        CHECK(rep.steps_written == 3);
        CHECK(rep.conservation_ok);
        CHECK(rep.elapsed_s > 0.0);
        CHECK(rep.dumps_in_window > 0.0);
        CHECK(rep.store_bps_weighted > 0.0);
        CHECK(rep.load_bps_weighted > 0.0);

        // 2 writers x 3 steps of store samples, 1 reader x 3 of load.
        std::size_t stores = 0, loads = 0;
        for (const Sample &sample : rep.samples)
        {
            (sample.role == SampleRole::Store ? stores : loads) += 1;
        }
        CHECK(stores == 6);
        CHECK(loads == 3);

        namespace fs = std::filesystem;
        CHECK(fs::exists(dir.File("out") + "/plan.json"));
        CHECK(fs::exists(dir.File("out") + "/summary.json"));
        CHECK(fs::exists(dir.File("out") + "/rep0/samples.csv"));
    }

    TEST_CASE("harness runs a stream plan with concurrent consumers")
    {
        ScratchDir dir("bench-stream");
        BenchPlan plan;
        plan.writers = 2;
        plan.readers = 2;
        plan.bytes_per_writer_per_step = 8192;
        plan.steps_per_writer = 3;
        plan.compute_delay_ms = 10;
        plan.duration_s = 2.0;
        plan.repetitions = 1;
        plan.engine.engine = EngineKind::Stream;
        plan.engine.queue_policy = QueuePolicy::Block;
        plan.engine.strategy.kind = StrategyKind::Binpacking;

        const BenchReport report =
            RunBench(plan, dir.File("out"), CHUNKSTREAM_BENCH_EXE);

        CHECK_FALSE(report.failed);
        REQUIRE(report.repetitions.size() == 1);
        const RepetitionReport &rep = report.repetitions[0];
        CHECK(rep.dumps_completed == 3);
        CHECK(rep.steps_published == 3);
        CHECK(rep.conservation_ok);
        CHECK(rep.total_data_connections == rep.distinct_pairs);
        CHECK(rep.distinct_pairs >= 2); // both halves must be fetched
        CHECK(rep.imbalance >= 1.0);
        CHECK(rep.imbalance <= 2.0);
    }

    TEST_CASE("failing workers mark the repetition failed")
    {
        ScratchDir dir("bench-fail");
        BenchPlan plan;
        plan.writers = 1;
        plan.readers = 0;
        plan.bytes_per_writer_per_step = 64;
        plan.steps_per_writer = 1;
        plan.duration_s = 1.0;
        plan.repetitions = 1;
        plan.engine.engine = EngineKind::File;

        // A worker binary that cannot exec produces exit code 127.
        const BenchReport report =
            RunBench(plan, dir.File("out"), dir.File("no-such-binary"));
        CHECK(report.failed);
        REQUIRE(report.repetitions.size() == 1);
        CHECK(report.repetitions[0].failed);
        CHECK(report.MeanDumpsInWindow() == 0.0);
    }
}
