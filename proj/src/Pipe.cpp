/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Pipe.cpp : step-forwarding adaptor between two engine instances
 *
 */

#include "chunkstream/Pipe.hpp"

#include "chunkstream/Errors.hpp"

#include <chrono>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>
#include <utility>

namespace chunkstream
{

namespace
{

/** Everything the store side needs about one delivered step, detached
 *  from the reader so the source step can be released early. */
struct StepJob
{
    struct Piece
    {
        std::string dataset;
        Region region;
        std::vector<std::uint8_t> bytes;
    };

    std::uint64_t step_index = 0;
    std::vector<DatasetDecl> datasets;
    AttributeMap attributes;
    std::vector<Piece> pieces;
    std::uint64_t payload_bytes = 0;
    double load_s = 0.0;
};

/** Single-slot handoff between the load loop and the store worker.
 *  Push blocks while the previous job is still being stored, which
 *  bounds the pipe to two steps in flight. */
class JobSlot
{
public:
    void Push(StepJob job)
    {
        std::unique_lock<std::mutex> lock(m_Mutex);
        m_CanPush.wait(lock, [&] { return !m_Job || m_Closed; });
        if (m_Closed)
        {
            return; // the worker is gone; the caller will see its error
        }
        m_Job = std::move(job);
        m_CanPop.notify_one();
    }

    std::optional<StepJob> Pop()
    {
        std::unique_lock<std::mutex> lock(m_Mutex);
        m_CanPop.wait(lock, [&] { return m_Job || m_Closed; });
        if (!m_Job)
        {
            return std::nullopt;
        }
        std::optional<StepJob> job = std::move(m_Job);
        m_Job.reset();
        m_CanPush.notify_one();
        return job;
    }

    void CloseSlot()
    {
        std::lock_guard<std::mutex> lock(m_Mutex);
        m_Closed = true;
        m_CanPop.notify_all();
        m_CanPush.notify_all();
    }

private:
    std::mutex m_Mutex;
    std::condition_variable m_CanPush;
    std::condition_variable m_CanPop;
    std::optional<StepJob> m_Job;
    bool m_Closed = false;
};

const DatasetDecl &FindDecl(const std::vector<DatasetDecl> &decls,
                            const std::string &name)
{
    for (const auto &decl : decls)
    {
        if (decl.name == name)
        {
            return decl;
        }
    }
    throw ValidationError("assigned slab references undeclared dataset '" +
                          name + "'");
}

double SecondsSince(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         t0)
        .count();
}

} // end anonymous namespace

void PipeSpec::Validate() const
{
    if (sinks.empty())
    {
        throw ConfigError("pipe needs at least one sink");
    }
    for (const auto &sink : sinks)
    {
        if (sink.series.empty())
        {
            throw ConfigError("pipe sink series name is empty");
        }
        if (sink.series == source_series)
        {
            throw ConfigError("pipe sink '" + sink.series +
                              "' names the source series");
        }
        sink.config.Validate();
    }
    if (source_series.empty())
    {
        throw ConfigError("pipe source series name is empty");
    }
    source_config.Validate();
    strategy.Validate();
    if (group.rank >= group.group_size)
    {
        throw ConfigError("pipe group rank " + std::to_string(group.rank) +
                          " is outside group size " +
                          std::to_string(group.group_size));
    }
}

std::uint64_t PipeReport::TotalBytes() const
{
    std::uint64_t total = 0;
    for (const auto &row : steps)
    {
        total += row.bytes;
    }
    return total;
}

PipeReport RunPipe(const PipeSpec &spec)
{
    spec.Validate();

    EngineConfig source_cfg = spec.source_config;
    source_cfg.strategy = spec.strategy;

    Reader reader =
        OpenReader(spec.source_series, spec.group, source_cfg);

    std::vector<Writer> writers;
    writers.reserve(spec.sinks.size());
    GroupSpec writer_group;
    writer_group.rank = spec.group.rank;
    writer_group.group_size = spec.group.group_size;
    for (const auto &sink : spec.sinks)
    {
        writers.push_back(OpenWriter(sink.series, writer_group, sink.config));
    }

    PipeReport report;
    JobSlot slot;
    std::exception_ptr store_error;
    std::mutex store_error_mutex;

    std::thread store_worker(
        [&]
        {
            try
            {
                while (auto job = slot.Pop())
                {
                    const auto t0 = std::chrono::steady_clock::now();
                    for (auto &writer : writers)
                    {
                        writer.BeginStep(job->step_index);
                        for (const auto &decl : job->datasets)
                        {
                            writer.Declare(decl);
                        }
                        for (const auto &[name, value] : job->attributes)
                        {
                            writer.SetAttribute(name, value);
                        }
                        for (const auto &piece : job->pieces)
                        {
                            writer.PutChunk(
                                FindDecl(job->datasets, piece.dataset),
                                piece.region, piece.bytes);
                        }
                        writer.EndStep();
                    }
                    PipeStepReport row;
                    row.step_index = job->step_index;
                    row.bytes = job->payload_bytes;
                    row.load_s = job->load_s;
                    row.store_s = SecondsSince(t0);
                    report.steps.push_back(row);
                }
            }
            catch (...)
            {
                {
                    std::lock_guard<std::mutex> lock(store_error_mutex);
                    store_error = std::current_exception();
                }
                // Unblock a Push stuck waiting for this worker.
                slot.CloseSlot();
            }
        });

    auto store_failed = [&]
    {
        std::lock_guard<std::mutex> lock(store_error_mutex);
        return static_cast<bool>(store_error);
    };

    try
    {
        while (auto announcement = reader.NextStep())
        {
            if (store_failed())
            {
                break;
            }

            StepJob job;
            job.step_index = announcement->step_index;
            job.datasets = announcement->datasets;
            job.attributes = announcement->attributes;

            const auto t0 = std::chrono::steady_clock::now();
            const auto &table = announcement->chunk_table;
            for (const auto &slab : reader.AssignedSlabs())
            {
                StepJob::Piece piece;
                piece.dataset = table.at(slab.source).dataset;
                piece.region = slab.region;
                piece.bytes = reader.GetRegion(piece.dataset, piece.region);
                job.payload_bytes += piece.bytes.size();
                job.pieces.push_back(std::move(piece));
            }
            reader.ReleaseStep();
            job.load_s = SecondsSince(t0);

            slot.Push(std::move(job));
        }
        slot.CloseSlot();
    }
    catch (...)
    {
        slot.CloseSlot();
        store_worker.join();
        throw;
    }

    store_worker.join();
    if (store_error)
    {
        std::rethrow_exception(store_error);
    }

    reader.Close();
    for (auto &writer : writers)
    {
        writer.Close();
    }
    report.source_stats = reader.Stats();
    for (const auto &writer : writers)
    {
        report.sink_stats.push_back(writer.Stats());
    }
    return report;
}

std::string ToCsv(const PipeReport &report)
{
    std::ostringstream out;
    out << "step,bytes,load_s,store_s\n";
    out << std::fixed;
    out.precision(9);
    for (const auto &row : report.steps)
    {
        out << row.step_index << ',' << row.bytes << ',' << row.load_s << ','
            << row.store_s << '\n';
    }
    return out.str();
}

} // end namespace chunkstream
