/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Pipe.hpp : step-forwarding adaptor between two engine instances
 *
 */

#ifndef CHUNKSTREAM_PIPE_HPP
#define CHUNKSTREAM_PIPE_HPP

#include "chunkstream/Distribution.hpp"
#include "chunkstream/Engine.hpp"
#include "chunkstream/EngineConfig.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace chunkstream
{

/** One output of a pipe: a series name plus the engine configuration
 *  to open it with. */
struct PipeSink
{
    std::string series;
    EngineConfig config;
};

/** A pipe instance consumes a source series and republishes every
 *  delivered step, verbatim, to one or more sink series.  Multiple
 *  instances form a reader group on the source and a writer group on
 *  every sink (same rank and size on both sides). */
struct PipeSpec
{
    std::string source_series;
    EngineConfig source_config;

    /** At least one sink; no sink may name the source series. */
    std::vector<PipeSink> sinks;

    /** How the source steps are split over the pipe instances.
     *  Overrides the strategy in `source_config`. */
    StrategySpec strategy;

    /** This instance's place in the pipe group. */
    GroupSpec group;

    /** Throws ConfigError when the spec cannot describe a runnable
     *  pipe. */
    void Validate() const;
};

/** Timings and volume of one forwarded step. */
struct PipeStepReport
{
    std::uint64_t step_index = 0;

    /** Payload bytes this instance loaded and re-published. */
    std::uint64_t bytes = 0;

    /** Seconds spent loading the assigned slabs from the source. */
    double load_s = 0.0;

    /** Seconds spent republishing the step to all sinks. */
    double store_s = 0.0;
};

struct PipeReport
{
    std::vector<PipeStepReport> steps;

    /** Final handle statistics: the source reader's and one entry per
     *  sink writer. */
    ReaderStats source_stats;
    std::vector<WriterStats> sink_stats;

    std::uint64_t TotalBytes() const;
};

/** Runs one pipe instance until the source reaches end of series: for
 *  every delivered step, loads this instance's assigned slabs, releases
 *  the source step, and republishes the slabs as this instance's chunks
 *  to every sink under the source's step index, datasets, and
 *  attributes.  Loading of step N+1 overlaps republishing of step N;
 *  at most two steps are in flight.  Errors from either side
 *  propagate. */
PipeReport RunPipe(const PipeSpec &spec);

/** Serializes a report as CSV (header `step,bytes,load_s,store_s`). */
std::string ToCsv(const PipeReport &report);

} // end namespace chunkstream

#endif /* CHUNKSTREAM_PIPE_HPP */
