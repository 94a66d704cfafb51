/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Bench.hpp : multi-process benchmark harness producing the framework's
 *             throughput and distribution metrics
 *
 */

#ifndef CHUNKSTREAM_BENCH_HPP
#define CHUNKSTREAM_BENCH_HPP

#include "chunkstream/BenchMetrics.hpp"
#include "chunkstream/EngineConfig.hpp"
#include "chunkstream/Pipe.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace chunkstream
{

/** One virtual host of the benchmark topology.  Worker processes
 *  placed here run with their hostname overridden, so host-aware
 *  distribution can be exercised on a single machine. */
struct BenchHost
{
    std::string hostname;
    std::vector<std::uint32_t> writer_ranks;
    std::vector<std::uint32_t> reader_ranks;
};

/** A complete description of one benchmark scenario.  Every writer
 *  publishes one contiguous piece of a shared 1-D byte dataset per
 *  step; the consumer side either reads its assigned slabs (plain
 *  readers) or forwards them into `sink` (pipe instances). */
struct BenchPlan
{
    std::uint32_t writers = 6;
    std::uint32_t readers = 1;

    /** Uniform payload per writer per step; `writer_bytes` (when
     *  non-empty, one entry per writer) overrides it per rank. */
    std::uint64_t bytes_per_writer_per_step = 64ull << 20;
    std::vector<std::uint64_t> writer_bytes;

    /** Steps every writer performs.  0 derives the count that fills
     *  `duration_s` at the synthetic compute cadence, which requires
     *  compute_delay_ms > 0. */
    std::uint64_t steps_per_writer = 0;

    /** Synthetic compute time between dumps. */
    std::uint32_t compute_delay_ms = 0;

    /** Extra per-step consumer delay (models slow analysis). */
    std::uint32_t reader_delay_ms = 0;

    /** The measurement window results are normalized to. */
    double duration_s = 60.0;

    std::uint32_t repetitions = 3;

    /** Series name; placed inside the repetition directory. */
    std::string series = "bench";

    /** Engine (and distribution strategy) under test. */
    EngineConfig engine;

    /** When set, consumers run as pipe instances forwarding into this
     *  sink instead of plain readers. */
    std::optional<PipeSink> sink;

    /** Virtual host placement; empty runs everything on the real
     *  host. */
    std::vector<BenchHost> topology;

    void Validate() const;

    std::uint64_t StepsPerWriter() const;
    std::uint64_t WriterBytes(std::uint32_t rank) const;
    std::uint64_t WriterOffset(std::uint32_t rank) const;
    std::uint64_t TotalStepBytes() const;

    /** The virtual hostname of a rank, empty when unplaced. */
    std::string HostOf(std::uint32_t rank, bool is_writer) const;

    static BenchPlan FromJsonText(const std::string &text);
    std::string ToJsonText() const;
};

/** Everything measured in one repetition. */
struct RepetitionReport
{
    /** Steps every writer attempted. */
    std::uint64_t writer_steps = 0;

    /** Steps that reached the plan's terminal store (container steps
     *  when one exists, otherwise completed consumer steps; published
     *  steps when there are no consumers). */
    std::uint64_t dumps_completed = 0;

    /** Wall time of the dump window: first spawn until the last worker
     *  that stores dumps exits.  With a stream source this covers the
     *  concurrent consumers (a dump is not done until it drained); with
     *  a container source the post-hoc read phase is excluded. */
    double elapsed_s = 0.0;

    /** dumps_completed normalized to the plan's duration window. */
    double dumps_in_window = 0.0;

    std::uint64_t steps_published = 0;
    std::uint64_t steps_discarded = 0;
    std::uint64_t steps_written = 0;

    /** Perceived throughput over per-dump samples: weighted folds all
     *  dumps into one ratio (total bytes over total slowest-rank time);
     *  unweighted averages the per-dump ratios. */
    double store_bps_weighted = 0.0;
    double store_bps_unweighted = 0.0;
    double load_bps_weighted = 0.0;
    double load_bps_unweighted = 0.0;

    WhiskerStats store_whiskers;
    WhiskerStats load_whiskers;

    /** Imbalance of the configured strategy on this plan's chunk
     *  geometry (1.0 when there are no consumers). */
    double imbalance = 1.0;

    /** Data connections accepted by all writers / distinct
     *  (writer, consumer) pairs that actually shared data. */
    std::uint64_t total_data_connections = 0;
    std::uint64_t distinct_pairs = 0;

    /** Every delivered step's loaded bytes summed to the published
     *  volume. */
    bool conservation_ok = true;

    bool failed = false;

    std::vector<Sample> samples;
};

struct BenchReport
{
    BenchPlan plan;
    std::vector<RepetitionReport> repetitions;
    bool failed = false;

    /** Mean dumps_in_window over the non-failed repetitions. */
    double MeanDumpsInWindow() const;

    std::string ToJsonText() const;
};

/** Runs the plan: per repetition, spawns one worker process per writer
 *  and consumer rank (re-invoking `worker_exe`, which must route the
 *  --bench-worker flags back into RunBenchWorker), collects their
 *  sample files, and aggregates the report.  Writes plan.json,
 *  rep<k>/samples.csv, and summary.json under `out_dir`.  A failing or
 *  stuck worker marks the repetition and the report as failed; partial
 *  results are kept. */
BenchReport RunBench(const BenchPlan &plan, const std::string &out_dir,
                     const std::string &worker_exe);

/** The worker-process entry point: runs one rank of the plan and
 *  writes its samples and stats into the repetition directory.
 *  `role` is "writer", "reader", or "pipe".  Returns a process exit
 *  code. */
int RunBenchWorker(const std::string &role, std::uint32_t rank,
                   const std::string &plan_path, const std::string &rep_dir);

} // end namespace chunkstream

#endif /* CHUNKSTREAM_BENCH_HPP */
