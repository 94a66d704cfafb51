/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * BenchMetrics.hpp : timing samples and the statistics reported by the
 *                    benchmark harness
 *
 */

#ifndef CHUNKSTREAM_BENCHMETRICS_HPP
#define CHUNKSTREAM_BENCHMETRICS_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace chunkstream
{

enum class SampleRole
{
    Store, ///< one rank finishing one step publish/write
    Load,  ///< one rank finishing one step's assigned reads
};

std::string ToString(SampleRole role);
SampleRole SampleRoleFromString(const std::string &name);

/** One timed operation of one rank in one step. */
struct Sample
{
    SampleRole role = SampleRole::Store;
    std::uint64_t step = 0;
    std::uint32_t rank = 0;
    std::uint64_t bytes = 0;
    double seconds = 0.0;

    friend bool operator==(const Sample &, const Sample &) = default;
};

/** The application-perceived throughput of one collective dump: the
 *  total bytes moved divided by the time of the slowest participating
 *  rank (the application continues only when the last rank finishes).
 *  Throws ValidationError on an empty sample set or when no rank took
 *  measurable time. */
double PerceivedThroughput(std::span<const Sample> dump);

/** The q-quantile (0 <= q <= 1) of the values by linear interpolation
 *  between order statistics at rank (n-1)*q.  `sorted` must be
 *  ascending and non-empty. */
double Quantile(std::span<const double> sorted, double q);

/** Box-and-whisker summary: quartiles by linear interpolation, whiskers
 *  at the most extreme samples within 1.5 IQR of the box, everything
 *  beyond listed as outliers. */
struct WhiskerStats
{
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double lower_whisker = 0.0;
    double upper_whisker = 0.0;
    std::vector<double> outliers;
};

/** Throws ValidationError on empty input. */
WhiskerStats ComputeWhiskerStats(std::vector<double> values);

/** Serializes samples as CSV with header `role,step,rank,bytes,seconds`
 *  and parses them back (used as the channel between benchmark worker
 *  processes and the harness).  Parsing throws ValidationError on
 *  malformed input. */
std::string ToCsv(const std::vector<Sample> &samples);
std::vector<Sample> SamplesFromCsv(const std::string &text);

} // end namespace chunkstream

#endif /* CHUNKSTREAM_BENCHMETRICS_HPP */
