/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Bench.cpp : multi-process benchmark harness producing the framework's
 *             throughput and distribution metrics
 *
 */

#include "chunkstream/Bench.hpp"

#include "chunkstream/Distribution.hpp"
#include "chunkstream/Engine.hpp"
#include "chunkstream/Errors.hpp"

#include "JsonCodec.hpp"

#include <algorithm>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <sys/wait.h>
#include <unistd.h>

extern char **environ;

namespace chunkstream
{

namespace fs = std::filesystem;

namespace
{

using Clock = std::chrono::steady_clock;

double SecondsSince(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

/** The shared 1-D byte dataset every benchmark writer contributes one
 *  contiguous piece to. */
DatasetDecl PayloadDecl(const BenchPlan &plan)
{
    DatasetDecl decl;
    decl.name = "payload";
    decl.elem_kind = ElemKind::UInt8;
    decl.global_extent = {plan.TotalStepBytes()};
    return decl;
}

/** Rewrites the plan's series and contact locations into the
 *  repetition directory.  Workers and the harness apply the identical
 *  rewrite, so both sides agree on every path. */
BenchPlan ResolveForRep(BenchPlan plan, const std::string &rep_dir)
{
    plan.series = (fs::path(rep_dir) / plan.series).string();
    if (plan.engine.engine == EngineKind::Stream)
    {
        plan.engine.contact_path =
            (fs::path(rep_dir) / "source.contact").string();
    }
    if (plan.sink)
    {
        plan.sink->series = (fs::path(rep_dir) / plan.sink->series).string();
        if (plan.sink->config.engine == EngineKind::Stream)
        {
            plan.sink->config.contact_path =
                (fs::path(rep_dir) / "sink.contact").string();
        }
    }
    return plan;
}

/** The consumer-group roster, with virtual hostnames when the plan
 *  places ranks on hosts (the file engine cannot learn them at
 *  runtime). */
std::vector<RankMeta> ConsumerRoster(const BenchPlan &plan)
{
    std::vector<RankMeta> members;
    if (plan.topology.empty())
    {
        return members;
    }
    for (std::uint32_t rank = 0; rank < plan.readers; ++rank)
    {
        members.push_back(RankMeta{rank, plan.HostOf(rank, false)});
    }
    return members;
}

void WriteText(const std::string &path, const std::string &text)
{
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out)
    {
        throw ConfigError("cannot write '" + path + "'");
    }
    out << text;
}

std::string ReadText(const std::string &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
    {
        throw ConfigError("cannot read '" + path + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string SamplesPath(const std::string &rep_dir, const std::string &role,
                        std::uint32_t rank)
{
    return (fs::path(rep_dir) /
            ("samples-" + role + "-" + std::to_string(rank) + ".csv"))
        .string();
}

std::string StatsPath(const std::string &rep_dir, const std::string &role,
                      std::uint32_t rank)
{
    return (fs::path(rep_dir) /
            ("stats-" + role + "-" + std::to_string(rank) + ".json"))
        .string();
}

int WriterWorker(const BenchPlan &plan, std::uint32_t rank,
                 const std::string &rep_dir)
{
    GroupSpec group;
    group.rank = rank;
    group.group_size = plan.writers;

    const DatasetDecl decl = PayloadDecl(plan);
    const Region mine{{plan.WriterOffset(rank)}, {plan.WriterBytes(rank)}};
    const std::vector<std::uint8_t> payload(
        plan.WriterBytes(rank),
        static_cast<std::uint8_t>(rank * 37 + 11));

    std::vector<Sample> samples;
    Writer writer = OpenWriter(plan.series, group, plan.engine);
    const auto t_begin = Clock::now();
    const std::uint64_t steps = plan.StepsPerWriter();
    for (std::uint64_t step = 0; step < steps; ++step)
    {
        if (plan.compute_delay_ms > 0)
        {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(plan.compute_delay_ms));
        }
        const auto t0 = Clock::now();
        writer.BeginStep();
        writer.Declare(decl);
        writer.PutChunk(decl, mine, payload);
        const StepOutcome outcome = writer.EndStep();
        const double seconds = SecondsSince(t0);
        if (outcome != StepOutcome::Discarded)
        {
            samples.push_back(Sample{SampleRole::Store, step, rank,
                                     plan.WriterBytes(rank), seconds});
        }
    }
    writer.Close();
    const double elapsed = SecondsSince(t_begin);

    const WriterStats &stats = writer.Stats();
    codec::Json j{{"elapsed_s", elapsed},
                  {"published", stats.steps_published},
                  {"discarded", stats.steps_discarded},
                  {"written", stats.steps_written},
                  {"max_staged", stats.max_staged},
                  {"data_connections", stats.data_connections}};
    WriteText(SamplesPath(rep_dir, "writer", rank), ToCsv(samples));
    WriteText(StatsPath(rep_dir, "writer", rank), j.dump(2));
    return 0;
}

int ReaderWorker(const BenchPlan &plan, std::uint32_t rank,
                 const std::string &rep_dir)
{
    GroupSpec group;
    group.rank = rank;
    group.group_size = plan.readers;
    group.group_name = "bench-consumers";
    group.members = ConsumerRoster(plan);

    std::vector<Sample> samples;
    Reader reader = OpenReader(plan.series, group, plan.engine);
    const auto t_begin = Clock::now();
    while (auto announcement = reader.NextStep())
    {
        if (plan.reader_delay_ms > 0)
        {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(plan.reader_delay_ms));
        }
        const auto t0 = Clock::now();
        std::uint64_t bytes = 0;
        const auto &table = announcement->chunk_table;
        for (const auto &slab : reader.AssignedSlabs())
        {
            bytes +=
                reader.GetRegion(table.at(slab.source).dataset, slab.region)
                    .size();
        }
        samples.push_back(Sample{SampleRole::Load, announcement->step_index,
                                 rank, bytes, SecondsSince(t0)});
        reader.ReleaseStep();
    }
    reader.Close();
    const double elapsed = SecondsSince(t_begin);

    const ReaderStats &stats = reader.Stats();
    codec::Json j{{"elapsed_s", elapsed},
                  {"delivered", stats.steps_delivered},
                  {"bytes_fetched", stats.bytes_fetched},
                  {"writers_contacted",
                   std::vector<std::uint32_t>(stats.writers_contacted.begin(),
                                              stats.writers_contacted.end())}};
    WriteText(SamplesPath(rep_dir, "reader", rank), ToCsv(samples));
    WriteText(StatsPath(rep_dir, "reader", rank), j.dump(2));
    return 0;
}

int PipeWorker(const BenchPlan &plan, std::uint32_t rank,
               const std::string &rep_dir)
{
    PipeSpec spec;
    spec.source_series = plan.series;
    spec.source_config = plan.engine;
    spec.sinks.push_back(*plan.sink);
    spec.strategy = plan.engine.strategy;
    spec.group.rank = rank;
    spec.group.group_size = plan.readers;
    spec.group.group_name = "bench-consumers";
    spec.group.members = ConsumerRoster(plan);

    const auto t_begin = Clock::now();
    const PipeReport report = RunPipe(spec);
    const double elapsed = SecondsSince(t_begin);

    std::vector<Sample> samples;
    for (const auto &row : report.steps)
    {
        samples.push_back(Sample{SampleRole::Load, row.step_index, rank,
                                 row.bytes, row.load_s});
        samples.push_back(Sample{SampleRole::Store, row.step_index, rank,
                                 row.bytes, row.store_s});
    }

    codec::Json j{
        {"elapsed_s", elapsed},
        {"delivered", report.steps.size()},
        {"bytes_fetched", report.TotalBytes()},
        {"writers_contacted",
         std::vector<std::uint32_t>(
             report.source_stats.writers_contacted.begin(),
             report.source_stats.writers_contacted.end())}};
    WriteText(SamplesPath(rep_dir, "pipe", rank), ToCsv(samples));
    WriteText(StatsPath(rep_dir, "pipe", rank), j.dump(2));
    return 0;
}

struct WorkerProc
{
    pid_t pid = -1;
    std::string role;
    std::uint32_t rank = 0;
    bool exited = false;
    int exit_code = -1;
};

/** Forks and execs one worker.  argv and envp are fully prepared
 *  before the fork, so the child only calls execve. */
pid_t SpawnWorker(const std::string &exe, const std::string &role,
                  std::uint32_t rank, const std::string &plan_path,
                  const std::string &rep_dir, const std::string &hostname)
{
    std::vector<std::string> args{
        exe,           "--bench-worker",  role,    "--bench-rank",
        std::to_string(rank), "--bench-plan", plan_path, "--bench-rep-dir",
        rep_dir};
    std::vector<char *> argv;
    for (auto &arg : args)
    {
        argv.push_back(arg.data());
    }
    argv.push_back(nullptr);

    std::vector<std::string> env_strings;
    for (char **entry = environ; *entry != nullptr; ++entry)
    {
        if (std::string(*entry).rfind("CHUNKSTREAM_HOSTNAME=", 0) != 0)
        {
            env_strings.emplace_back(*entry);
        }
    }
    if (!hostname.empty())
    {
        env_strings.push_back("CHUNKSTREAM_HOSTNAME=" + hostname);
    }
    std::vector<char *> envp;
    for (auto &entry : env_strings)
    {
        envp.push_back(entry.data());
    }
    envp.push_back(nullptr);

    const pid_t pid = ::fork();
    if (pid < 0)
    {
        throw ConfigError("fork failed for benchmark worker");
    }
    if (pid == 0)
    {
        ::execve(exe.c_str(), argv.data(), envp.data());
        ::_exit(127);
    }
    return pid;
}

/** Counts the steps of a finished container series; 0 when it cannot
 *  be opened. */
std::uint64_t CountContainerSteps(const std::string &series,
                                  EngineConfig cfg)
{
    cfg.rendezvous_timeout_s = 2.0;
    try
    {
        Reader reader = OpenReader(series, GroupSpec{}, cfg);
        std::uint64_t steps = 0;
        while (reader.NextStep())
        {
            ++steps;
        }
        reader.Close();
        return steps;
    }
    catch (const Error &)
    {
        return 0;
    }
}

struct ParsedStats
{
    std::string role;
    std::uint32_t rank = 0;
    codec::Json j;
};

/** Aggregates one repetition's sample and stats files into a report.
 *  Tolerates missing files (the repetition is already failed then). */
RepetitionReport AssembleRepetition(const BenchPlan &plan,
                                    const BenchPlan &resolved,
                                    const std::string &rep_dir,
                                    double elapsed_s, bool workers_failed)
{
    RepetitionReport rep;
    rep.writer_steps = plan.StepsPerWriter();
    rep.elapsed_s = elapsed_s;
    rep.failed = workers_failed;

    std::vector<Sample> writer_stores;
    std::vector<Sample> consumer_loads;
    std::vector<Sample> pipe_stores;
    std::vector<ParsedStats> stats;

    for (std::uint32_t rank = 0; rank < plan.writers; ++rank)
    {
        const std::string path = SamplesPath(rep_dir, "writer", rank);
        if (!fs::exists(path))
        {
            rep.failed = true;
            continue;
        }
        const auto samples = SamplesFromCsv(ReadText(path));
        writer_stores.insert(writer_stores.end(), samples.begin(),
                             samples.end());
    }
    const std::string consumer_role = plan.sink ? "pipe" : "reader";
    for (std::uint32_t rank = 0; rank < plan.readers; ++rank)
    {
        const std::string path = SamplesPath(rep_dir, consumer_role, rank);
        if (!fs::exists(path))
        {
            rep.failed = true;
            continue;
        }
        for (const Sample &sample : SamplesFromCsv(ReadText(path)))
        {
            (sample.role == SampleRole::Load ? consumer_loads : pipe_stores)
                .push_back(sample);
        }
    }
    for (std::uint32_t rank = 0; rank < plan.writers; ++rank)
    {
        const std::string path = StatsPath(rep_dir, "writer", rank);
        if (fs::exists(path))
        {
            stats.push_back({"writer", rank,
                             codec::Json::parse(ReadText(path), nullptr,
                                                /*allow_exceptions=*/false)});
        }
    }
    for (std::uint32_t rank = 0; rank < plan.readers; ++rank)
    {
        const std::string path = StatsPath(rep_dir, consumer_role, rank);
        if (fs::exists(path))
        {
            stats.push_back({consumer_role, rank,
                             codec::Json::parse(ReadText(path), nullptr,
                                                /*allow_exceptions=*/false)});
        }
    }

    rep.samples = writer_stores;
    rep.samples.insert(rep.samples.end(), consumer_loads.begin(),
                       consumer_loads.end());
    rep.samples.insert(rep.samples.end(), pipe_stores.begin(),
                       pipe_stores.end());

    // Writer-side outcome counters: collective steps, so report the
    // minimum across ranks (they agree unless something failed).
    bool first_writer = true;
    for (const auto &entry : stats)
    {
        if (entry.role != "writer" || entry.j.is_discarded())
        {
            continue;
        }
        const auto published = entry.j.value("published", std::uint64_t{0});
        const auto discarded = entry.j.value("discarded", std::uint64_t{0});
        const auto written = entry.j.value("written", std::uint64_t{0});
        if (first_writer)
        {
            rep.steps_published = published;
            rep.steps_discarded = discarded;
            rep.steps_written = written;
            first_writer = false;
        }
        else
        {
            rep.steps_published = std::min(rep.steps_published, published);
            rep.steps_discarded = std::min(rep.steps_discarded, discarded);
            rep.steps_written = std::min(rep.steps_written, written);
        }
        rep.total_data_connections +=
            entry.j.value("data_connections", std::uint64_t{0});
    }
    for (const auto &entry : stats)
    {
        if (entry.role == "writer" || entry.j.is_discarded())
        {
            continue;
        }
        if (entry.j.contains("writers_contacted"))
        {
            rep.distinct_pairs += entry.j["writers_contacted"].size();
        }
    }

    // Per-dump perceived throughput, grouped by step index.
    auto by_step = [](const std::vector<Sample> &samples)
    {
        std::map<std::uint64_t, std::vector<Sample>> groups;
        for (const Sample &sample : samples)
        {
            groups[sample.step].push_back(sample);
        }
        return groups;
    };
    auto fill_metrics = [&](const std::vector<Sample> &samples,
                            double &weighted, double &unweighted,
                            WhiskerStats &whiskers)
    {
        const auto groups = by_step(samples);
        if (groups.empty())
        {
            return;
        }
        std::vector<double> per_dump;
        std::uint64_t total_bytes = 0;
        double total_slowest = 0.0;
        for (const auto &[step, dump] : groups)
        {
            per_dump.push_back(PerceivedThroughput(dump));
            double slowest = 0.0;
            for (const Sample &sample : dump)
            {
                total_bytes += sample.bytes;
                slowest = std::max(slowest, sample.seconds);
            }
            total_slowest += slowest;
        }
        weighted = static_cast<double>(total_bytes) / total_slowest;
        unweighted = 0.0;
        for (double value : per_dump)
        {
            unweighted += value;
        }
        unweighted /= static_cast<double>(per_dump.size());
        whiskers = ComputeWhiskerStats(per_dump);
    };
    try
    {
        fill_metrics(writer_stores, rep.store_bps_weighted,
                     rep.store_bps_unweighted, rep.store_whiskers);
        fill_metrics(consumer_loads, rep.load_bps_weighted,
                     rep.load_bps_unweighted, rep.load_whiskers);
    }
    catch (const Error &)
    {
        rep.failed = true;
    }

    // Conservation: every step the consumers completed must account for
    // exactly the bytes the writers published for it.
    if (plan.readers > 0)
    {
        for (const auto &[step, dump] : by_step(consumer_loads))
        {
            if (dump.size() != plan.readers)
            {
                continue; // step cut off by a failure; not a violation
            }
            std::uint64_t bytes = 0;
            for (const Sample &sample : dump)
            {
                bytes += sample.bytes;
            }
            if (bytes != plan.TotalStepBytes())
            {
                rep.conservation_ok = false;
                rep.failed = true;
            }
        }
    }

    // Dumps that reached the plan's terminal store.
    if (plan.sink && plan.sink->config.engine == EngineKind::File)
    {
        rep.dumps_completed = CountContainerSteps(resolved.sink->series,
                                                  resolved.sink->config);
    }
    else if (!plan.sink && plan.engine.engine == EngineKind::File)
    {
        rep.dumps_completed =
            CountContainerSteps(resolved.series, resolved.engine);
    }
    else if (plan.sink)
    {
        rep.dumps_completed = by_step(pipe_stores).size();
    }
    else if (plan.readers > 0)
    {
        rep.dumps_completed = by_step(consumer_loads).size();
    }
    else
    {
        rep.dumps_completed = rep.steps_published;
    }
    if (rep.elapsed_s > 0.0)
    {
        rep.dumps_in_window = static_cast<double>(rep.dumps_completed) *
                              plan.duration_s / rep.elapsed_s;
    }

    // The strategy's balance on this plan's geometry (computable without
    // running: the chunk table is fully determined by the plan).
    if (plan.readers > 0)
    {
        std::vector<WrittenChunk> chunks;
        for (std::uint32_t rank = 0; rank < plan.writers; ++rank)
        {
            WrittenChunk chunk;
            chunk.dataset = "payload";
            chunk.region =
                Region{{plan.WriterOffset(rank)}, {plan.WriterBytes(rank)}};
            chunk.producer_rank = rank;
            chunk.hostname = plan.HostOf(rank, true);
            chunks.push_back(chunk);
        }
        std::vector<RankMeta> roster;
        for (std::uint32_t rank = 0; rank < plan.readers; ++rank)
        {
            roster.push_back(RankMeta{rank, plan.HostOf(rank, false)});
        }
        const std::vector<DatasetDecl> decls{PayloadDecl(plan)};
        rep.imbalance =
            Imbalance(Assign(plan.engine.strategy, chunks, roster, decls),
                      chunks, decls);
    }

    return rep;
}

} // end anonymous namespace

void BenchPlan::Validate() const
{
    if (writers == 0)
    {
        throw ConfigError("benchmark plan needs at least one writer");
    }
    if (!writer_bytes.empty() && writer_bytes.size() != writers)
    {
        throw ConfigError("writer_bytes must list one payload size per "
                          "writer");
    }
    for (std::uint32_t rank = 0; rank < writers; ++rank)
    {
        if (WriterBytes(rank) == 0)
        {
            throw ConfigError("writer payloads must be non-empty");
        }
    }
    if (steps_per_writer == 0 && compute_delay_ms == 0)
    {
        throw ConfigError("the step count is underdetermined: set "
                          "steps_per_writer or compute_delay_ms");
    }
    if (duration_s <= 0.0)
    {
        throw ConfigError("duration_s must be positive");
    }
    if (repetitions == 0)
    {
        throw ConfigError("repetitions must be positive");
    }
    if (series.empty())
    {
        throw ConfigError("benchmark plan needs a series name");
    }
    if (sink)
    {
        if (readers == 0)
        {
            throw ConfigError("a sink needs at least one consumer to "
                              "forward into it");
        }
        if (sink->series.empty() || sink->series == series)
        {
            throw ConfigError("the sink series must be distinct and "
                              "non-empty");
        }
    }

    // Contact paths are assigned per repetition, so validate the engine
    // configs with a stand-in.
    auto probe = [](EngineConfig cfg)
    {
        if (cfg.engine == EngineKind::Stream && cfg.contact_path.empty())
        {
            cfg.contact_path = "assigned-per-repetition";
        }
        cfg.Validate();
    };
    probe(engine);
    if (sink)
    {
        probe(sink->config);
    }

    if (!topology.empty())
    {
        std::set<std::uint32_t> writer_ranks;
        std::set<std::uint32_t> reader_ranks;
        for (const auto &host : topology)
        {
            if (host.hostname.empty())
            {
                throw ConfigError("topology hosts need names");
            }
            for (std::uint32_t rank : host.writer_ranks)
            {
                if (rank >= writers || !writer_ranks.insert(rank).second)
                {
                    throw ConfigError(
                        "topology writer rank " + std::to_string(rank) +
                        " is out of range or placed twice");
                }
            }
            for (std::uint32_t rank : host.reader_ranks)
            {
                if (rank >= readers || !reader_ranks.insert(rank).second)
                {
                    throw ConfigError(
                        "topology reader rank " + std::to_string(rank) +
                        " is out of range or placed twice");
                }
            }
        }
        if (writer_ranks.size() != writers || reader_ranks.size() != readers)
        {
            throw ConfigError("the topology must place every rank");
        }
    }
}

std::uint64_t BenchPlan::StepsPerWriter() const
{
    if (steps_per_writer > 0)
    {
        return steps_per_writer;
    }
    const double steps =
        duration_s * 1000.0 / static_cast<double>(compute_delay_ms);
    return std::max<std::uint64_t>(1,
                                   static_cast<std::uint64_t>(steps + 0.5));
}

std::uint64_t BenchPlan::WriterBytes(std::uint32_t rank) const
{
    return writer_bytes.empty() ? bytes_per_writer_per_step
                                : writer_bytes.at(rank);
}

std::uint64_t BenchPlan::WriterOffset(std::uint32_t rank) const
{
    std::uint64_t offset = 0;
    for (std::uint32_t r = 0; r < rank; ++r)
    {
        offset += WriterBytes(r);
    }
    return offset;
}

std::uint64_t BenchPlan::TotalStepBytes() const
{
    return WriterOffset(writers);
}

std::string BenchPlan::HostOf(std::uint32_t rank, bool is_writer) const
{
    for (const auto &host : topology)
    {
        const auto &ranks = is_writer ? host.writer_ranks : host.reader_ranks;
        if (std::find(ranks.begin(), ranks.end(), rank) != ranks.end())
        {
            return host.hostname;
        }
    }
    return "";
}

BenchPlan BenchPlan::FromJsonText(const std::string &text)
{
    codec::Json j =
        codec::Json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object())
    {
        throw ConfigError("benchmark plan: malformed JSON");
    }
    BenchPlan plan;
    try
    {
        plan.writers = j.value("writers", plan.writers);
        plan.readers = j.value("readers", plan.readers);
        plan.bytes_per_writer_per_step = j.value(
            "bytes_per_writer_per_step", plan.bytes_per_writer_per_step);
        if (j.contains("writer_bytes"))
        {
            plan.writer_bytes =
                j["writer_bytes"].get<std::vector<std::uint64_t>>();
        }
        plan.steps_per_writer =
            j.value("steps_per_writer", plan.steps_per_writer);
        plan.compute_delay_ms =
            j.value("compute_delay_ms", plan.compute_delay_ms);
        plan.reader_delay_ms =
            j.value("reader_delay_ms", plan.reader_delay_ms);
        plan.duration_s = j.value("duration_s", plan.duration_s);
        plan.repetitions = j.value("repetitions", plan.repetitions);
        plan.series = j.value("series", plan.series);
        // Contact paths are assigned per repetition; give the nested
        // config parser a stand-in so plans can leave them out.
        auto parse_engine = [](codec::Json cfg)
        {
            if (cfg.value("engine", std::string{}) == "stream" &&
                !cfg.contains("contact_path"))
            {
                cfg["contact_path"] = "assigned-per-repetition";
            }
            return EngineConfig::FromJsonText(cfg.dump());
        };
        if (j.contains("engine"))
        {
            plan.engine = parse_engine(j["engine"]);
        }
        if (j.contains("sink"))
        {
            PipeSink sink;
            sink.series = j["sink"].value("series", std::string{});
            if (j["sink"].contains("config"))
            {
                sink.config = parse_engine(j["sink"]["config"]);
            }
            plan.sink = std::move(sink);
        }
        if (j.contains("topology"))
        {
            for (const auto &entry : j["topology"])
            {
                BenchHost host;
                host.hostname = entry.value("hostname", std::string{});
                if (entry.contains("writers"))
                {
                    host.writer_ranks =
                        entry["writers"].get<std::vector<std::uint32_t>>();
                }
                if (entry.contains("readers"))
                {
                    host.reader_ranks =
                        entry["readers"].get<std::vector<std::uint32_t>>();
                }
                plan.topology.push_back(std::move(host));
            }
        }
    }
    catch (const codec::Json::exception &e)
    {
        throw ConfigError(std::string{"benchmark plan: "} + e.what());
    }
    plan.Validate();
    return plan;
}

std::string BenchPlan::ToJsonText() const
{
    codec::Json j{{"writers", writers},
                  {"readers", readers},
                  {"bytes_per_writer_per_step", bytes_per_writer_per_step},
                  {"steps_per_writer", steps_per_writer},
                  {"compute_delay_ms", compute_delay_ms},
                  {"reader_delay_ms", reader_delay_ms},
                  {"duration_s", duration_s},
                  {"repetitions", repetitions},
                  {"series", series},
                  {"engine", codec::Json::parse(engine.ToJsonText())}};
    if (!writer_bytes.empty())
    {
        j["writer_bytes"] = writer_bytes;
    }
    if (sink)
    {
        j["sink"] = {{"series", sink->series},
                     {"config", codec::Json::parse(sink->config.ToJsonText())}};
    }
    if (!topology.empty())
    {
        codec::Json hosts = codec::Json::array();
        for (const auto &host : topology)
        {
            hosts.push_back({{"hostname", host.hostname},
                             {"writers", host.writer_ranks},
                             {"readers", host.reader_ranks}});
        }
        j["topology"] = std::move(hosts);
    }
    return j.dump(2);
}

namespace
{

codec::Json ToJson(const WhiskerStats &w)
{
    return codec::Json{{"median", w.median},
                       {"q1", w.q1},
                       {"q3", w.q3},
                       {"lower_whisker", w.lower_whisker},
                       {"upper_whisker", w.upper_whisker},
                       {"outliers", w.outliers}};
}

codec::Json ToJson(const RepetitionReport &rep)
{
    return codec::Json{
        {"writer_steps", rep.writer_steps},
        {"dumps_completed", rep.dumps_completed},
        {"elapsed_s", rep.elapsed_s},
        {"dumps_in_window", rep.dumps_in_window},
        {"steps_published", rep.steps_published},
        {"steps_discarded", rep.steps_discarded},
        {"steps_written", rep.steps_written},
        {"store_bps_weighted", rep.store_bps_weighted},
        {"store_bps_unweighted", rep.store_bps_unweighted},
        {"load_bps_weighted", rep.load_bps_weighted},
        {"load_bps_unweighted", rep.load_bps_unweighted},
        {"store_whiskers", ToJson(rep.store_whiskers)},
        {"load_whiskers", ToJson(rep.load_whiskers)},
        {"imbalance", rep.imbalance},
        {"total_data_connections", rep.total_data_connections},
        {"distinct_pairs", rep.distinct_pairs},
        {"conservation_ok", rep.conservation_ok},
        {"failed", rep.failed}};
}

} // end anonymous namespace

double BenchReport::MeanDumpsInWindow() const
{
    double total = 0.0;
    std::size_t counted = 0;
    for (const auto &rep : repetitions)
    {
        if (!rep.failed)
        {
            total += rep.dumps_in_window;
            ++counted;
        }
    }
    return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

std::string BenchReport::ToJsonText() const
{
    codec::Json reps = codec::Json::array();
    for (const auto &rep : repetitions)
    {
        reps.push_back(ToJson(rep));
    }
    codec::Json j{{"plan", codec::Json::parse(plan.ToJsonText())},
                  {"repetitions", std::move(reps)},
                  {"mean_dumps_in_window", MeanDumpsInWindow()},
                  {"failed", failed}};
    return j.dump(2);
}

BenchReport RunBench(const BenchPlan &plan, const std::string &out_dir,
                     const std::string &worker_exe)
{
    plan.Validate();
    fs::create_directories(out_dir);
    const std::string plan_path = (fs::path(out_dir) / "plan.json").string();
    WriteText(plan_path, plan.ToJsonText());

    BenchReport report;
    report.plan = plan;

    for (std::uint32_t k = 0; k < plan.repetitions; ++k)
    {
        const std::string rep_dir =
            (fs::path(out_dir) / ("rep" + std::to_string(k))).string();
        fs::create_directories(rep_dir);
        const BenchPlan resolved = ResolveForRep(plan, rep_dir);

        struct WorkerSlot
        {
            std::string role;
            std::uint32_t rank;
            std::string host;
        };

        // Spawns the given workers and waits for all of them; workers
        // that outlive three windows plus slack are stuck and killed.
        // Returns the phase wall time; flags failures.
        bool workers_failed = false;
        auto run_phase = [&](const std::vector<WorkerSlot> &slots)
        {
            std::vector<WorkerProc> procs;
            const auto t0 = Clock::now();
            for (const auto &slot : slots)
            {
                procs.push_back(WorkerProc{
                    SpawnWorker(worker_exe, slot.role, slot.rank, plan_path,
                                rep_dir, slot.host),
                    slot.role, slot.rank, false, -1});
            }
            const double deadline_s = plan.duration_s * 3.0 + 120.0;
            std::size_t running = procs.size();
            while (running > 0 && SecondsSince(t0) < deadline_s)
            {
                for (auto &proc : procs)
                {
                    if (proc.exited)
                    {
                        continue;
                    }
                    int status = 0;
                    const pid_t got = ::waitpid(proc.pid, &status, WNOHANG);
                    if (got == proc.pid)
                    {
                        proc.exited = true;
                        proc.exit_code =
                            WIFEXITED(status) ? WEXITSTATUS(status) : -1;
                        --running;
                    }
                }
                if (running > 0)
                {
                    std::this_thread::sleep_for(
                        std::chrono::milliseconds(25));
                }
            }
            for (auto &proc : procs)
            {
                if (!proc.exited)
                {
                    ::kill(proc.pid, SIGKILL);
                    int status = 0;
                    ::waitpid(proc.pid, &status, 0);
                    proc.exited = true;
                    proc.exit_code = -1;
                    workers_failed = true;
                    std::cerr << "bench: killed stuck " << proc.role
                              << " rank " << proc.rank << "\n";
                }
                else if (proc.exit_code != 0)
                {
                    workers_failed = true;
                    std::cerr << "bench: " << proc.role << " rank "
                              << proc.rank << " exited with code "
                              << proc.exit_code << "\n";
                }
            }
            return SecondsSince(t0);
        };

        std::vector<WorkerSlot> producers;
        for (std::uint32_t rank = 0; rank < plan.writers; ++rank)
        {
            producers.push_back({"writer", rank, plan.HostOf(rank, true)});
        }
        const std::string consumer_role = plan.sink ? "pipe" : "reader";
        std::vector<WorkerSlot> consumers;
        for (std::uint32_t rank = 0; rank < plan.readers; ++rank)
        {
            consumers.push_back(
                {consumer_role, rank, plan.HostOf(rank, false)});
        }

        // A stream source is consumed while it is produced; a container
        // series only exists as a whole, so its consumers run as a
        // second phase and only the producing phase defines the dump
        // window.
        double elapsed_s = 0.0;
        if (plan.engine.engine == EngineKind::Stream)
        {
            std::vector<WorkerSlot> everyone = producers;
            everyone.insert(everyone.end(), consumers.begin(),
                            consumers.end());
            elapsed_s = run_phase(everyone);
        }
        else
        {
            elapsed_s = run_phase(producers);
            if (!consumers.empty())
            {
                run_phase(consumers);
            }
        }

        RepetitionReport rep = AssembleRepetition(plan, resolved, rep_dir,
                                                  elapsed_s, workers_failed);
        WriteText((fs::path(rep_dir) / "samples.csv").string(),
                  ToCsv(rep.samples));
        report.failed = report.failed || rep.failed;
        report.repetitions.push_back(std::move(rep));
    }

    WriteText((fs::path(out_dir) / "summary.json").string(),
              report.ToJsonText());
    return report;
}

int RunBenchWorker(const std::string &role, std::uint32_t rank,
                   const std::string &plan_path, const std::string &rep_dir)
{
    try
    {
        const BenchPlan plan =
            ResolveForRep(BenchPlan::FromJsonText(ReadText(plan_path)),
                          rep_dir);
        if (role == "writer")
        {
            return WriterWorker(plan, rank, rep_dir);
        }
        if (role == "reader")
        {
            return ReaderWorker(plan, rank, rep_dir);
        }
        if (role == "pipe")
        {
            return PipeWorker(plan, rank, rep_dir);
        }
        std::cerr << "bench worker: unknown role '" << role << "'\n";
        return 2;
    }
    catch (const std::exception &e)
    {
        std::cerr << "bench " << role << " rank " << rank << ": " << e.what()
                  << "\n";
        return 1;
    }
}

} // end namespace chunkstream
