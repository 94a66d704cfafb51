/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * BenchMain.cpp : chunkstream-bench, the multi-process benchmark
 *                 harness CLI
 *
 */

#include "chunkstream/Bench.hpp"
#include "chunkstream/Errors.hpp"

#include <CLI11.hpp>

#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace
{

/** The harness re-invokes this binary for every worker process with a
 *  fixed argument layout. */
int RunWorkerMode(int argc, char **argv)
{
    if (argc != 9 || std::strcmp(argv[3], "--bench-rank") != 0 ||
        std::strcmp(argv[5], "--bench-plan") != 0 ||
        std::strcmp(argv[7], "--bench-rep-dir") != 0)
    {
        std::cerr << "chunkstream-bench: malformed worker invocation\n";
        return 2;
    }
    try
    {
        const auto rank =
            static_cast<std::uint32_t>(std::stoul(argv[4]));
        return chunkstream::RunBenchWorker(argv[2], rank, argv[6], argv[8]);
    }
    catch (const std::exception &e)
    {
        std::cerr << "chunkstream-bench: " << e.what() << "\n";
        return 2;
    }
}

} // end anonymous namespace

int main(int argc, char **argv)
{
    if (argc > 1 && std::strcmp(argv[1], "--bench-worker") == 0)
    {
        return RunWorkerMode(argc, argv);
    }

    CLI::App app{"Runs a benchmark plan: spawns one process per writer "
                 "and consumer rank, collects timing samples, and writes "
                 "samples.csv and summary.json."};
    app.name("chunkstream-bench");

    std::string plan_path;
    std::string out_dir;
    app.add_option("--plan", plan_path, "Benchmark plan JSON file")
        ->required();
    app.add_option("--out", out_dir, "Output directory for the results")
        ->required();

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError &e)
    {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    chunkstream::BenchPlan plan;
    try
    {
        std::ifstream in(plan_path);
        if (!in)
        {
            std::cerr << "chunkstream-bench: cannot read plan '" << plan_path
                      << "'\n";
            return 2;
        }
        std::ostringstream buf;
        buf << in.rdbuf();
        plan = chunkstream::BenchPlan::FromJsonText(buf.str());
    }
    catch (const chunkstream::ConfigError &e)
    {
        std::cerr << "chunkstream-bench: " << e.what() << "\n";
        return 2;
    }

    try
    {
        const chunkstream::BenchReport report =
            chunkstream::RunBench(plan, out_dir, "/proc/self/exe");
        std::cerr << "chunkstream-bench: " << report.repetitions.size()
                  << " repetitions, mean " << report.MeanDumpsInWindow()
                  << " dumps per " << plan.duration_s << " s window"
                  << (report.failed ? " (FAILED)" : "") << "\n";
        return report.failed ? 1 : 0;
    }
    catch (const std::exception &e)
    {
        std::cerr << "chunkstream-bench: " << e.what() << "\n";
        return 1;
    }
}
