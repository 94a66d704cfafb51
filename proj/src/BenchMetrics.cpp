/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * BenchMetrics.cpp : timing samples and the statistics reported by the
 *                    benchmark harness
 *
 */

#include "chunkstream/BenchMetrics.hpp"

#include "chunkstream/Errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace chunkstream
{

std::string ToString(SampleRole role)
{
    return role == SampleRole::Store ? "store" : "load";
}

SampleRole SampleRoleFromString(const std::string &name)
{
    if (name == "store")
    {
        return SampleRole::Store;
    }
    if (name == "load")
    {
        return SampleRole::Load;
    }
    throw ValidationError("unknown sample role '" + name + "'");
}

double PerceivedThroughput(std::span<const Sample> dump)
{
    if (dump.empty())
    {
        throw ValidationError("perceived throughput of an empty dump");
    }
    std::uint64_t total_bytes = 0;
    double slowest = 0.0;
    for (const Sample &sample : dump)
    {
        total_bytes += sample.bytes;
        slowest = std::max(slowest, sample.seconds);
    }
    if (slowest <= 0.0)
    {
        throw ValidationError("perceived throughput of a dump in which no "
                              "rank took measurable time");
    }
    return static_cast<double>(total_bytes) / slowest;
}

double Quantile(std::span<const double> sorted, double q)
{
    if (sorted.empty())
    {
        throw ValidationError("quantile of an empty sample set");
    }
    if (q < 0.0 || q > 1.0)
    {
        throw ValidationError("quantile order must be within [0, 1]");
    }
    const double position = static_cast<double>(sorted.size() - 1) * q;
    const std::size_t below = static_cast<std::size_t>(std::floor(position));
    const std::size_t above = static_cast<std::size_t>(std::ceil(position));
    const double fraction = position - static_cast<double>(below);
    return sorted[below] + fraction * (sorted[above] - sorted[below]);
}

WhiskerStats ComputeWhiskerStats(std::vector<double> values)
{
    if (values.empty())
    {
        throw ValidationError("whisker statistics of an empty sample set");
    }
    std::sort(values.begin(), values.end());

    WhiskerStats stats;
    stats.median = Quantile(values, 0.5);
    stats.q1 = Quantile(values, 0.25);
    stats.q3 = Quantile(values, 0.75);
    const double reach = 1.5 * (stats.q3 - stats.q1);
    const double low_fence = stats.q1 - reach;
    const double high_fence = stats.q3 + reach;

    stats.lower_whisker = stats.q1;
    stats.upper_whisker = stats.q3;
    for (double value : values)
    {
        if (value < low_fence || value > high_fence)
        {
            stats.outliers.push_back(value);
            continue;
        }
        stats.lower_whisker = std::min(stats.lower_whisker, value);
        stats.upper_whisker = std::max(stats.upper_whisker, value);
    }
    return stats;
}

std::string ToCsv(const std::vector<Sample> &samples)
{
    std::ostringstream out;
    out << "role,step,rank,bytes,seconds\n";
    out.precision(17);
    for (const Sample &sample : samples)
    {
        out << ToString(sample.role) << ',' << sample.step << ','
            << sample.rank << ',' << sample.bytes << ',' << sample.seconds
            << '\n';
    }
    return out.str();
}

std::vector<Sample> SamplesFromCsv(const std::string &text)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "role,step,rank,bytes,seconds")
    {
        throw ValidationError("sample CSV is missing its header");
    }
    std::vector<Sample> samples;
    std::size_t line_no = 1;
    while (std::getline(in, line))
    {
        ++line_no;
        if (line.empty())
        {
            continue;
        }
        std::istringstream fields(line);
        std::string role, step, rank, bytes, seconds;
        if (!std::getline(fields, role, ',') ||
            !std::getline(fields, step, ',') ||
            !std::getline(fields, rank, ',') ||
            !std::getline(fields, bytes, ',') ||
            !std::getline(fields, seconds))
        {
            throw ValidationError("sample CSV line " +
                                  std::to_string(line_no) + " is malformed");
        }
        try
        {
            Sample sample;
            sample.role = SampleRoleFromString(role);
            sample.step = std::stoull(step);
            sample.rank = static_cast<std::uint32_t>(std::stoul(rank));
            sample.bytes = std::stoull(bytes);
            sample.seconds = std::stod(seconds);
            samples.push_back(sample);
        }
        catch (const std::logic_error &)
        {
            throw ValidationError("sample CSV line " +
                                  std::to_string(line_no) + " is malformed");
        }
    }
    return samples;
}

} // end namespace chunkstream
