/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * PipeMain.cpp : chunkstream-pipe, a CLI adaptor that forwards a series
 *                from one engine to one or two others
 *
 */

#include "chunkstream/Errors.hpp"
#include "chunkstream/Pipe.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

namespace
{

chunkstream::EngineConfig ResolveConfig(const std::string &path)
{
    return chunkstream::EngineConfig::LoadOrEnv(path);
}

} // end anonymous namespace

int main(int argc, char **argv)
{
    CLI::App app{"Forwards every step of a source series to one or two "
                 "sink series, republishing this instance's assigned "
                 "slabs verbatim."};
    app.name("chunkstream-pipe");

    std::string in_series;
    std::string in_config;
    std::string out_series;
    std::string out_config;
    std::string out2_series;
    std::string out2_config;
    std::string strategy_json;
    std::string report_path;
    std::uint32_t rank = 0;
    std::uint32_t group_size = 1;

    app.add_option("--in", in_series, "Source series name")->required();
    app.add_option("--in-config", in_config,
                   "Engine config JSON for the source (falls back to "
                   "$CHUNKSTREAM_CONFIG)");
    app.add_option("--out", out_series, "Sink series name")->required();
    app.add_option("--out-config", out_config,
                   "Engine config JSON for the sink (falls back to "
                   "$CHUNKSTREAM_CONFIG)");
    app.add_option("--out2", out2_series, "Optional second sink series");
    app.add_option("--out2-config", out2_config,
                   "Engine config JSON for the second sink");
    app.add_option("--strategy", strategy_json,
                   "Distribution strategy JSON for the source reads "
                   "(default: the source config's strategy)");
    app.add_option("--report", report_path,
                   "Write a per-step CSV report (step,bytes,load_s,store_s) "
                   "to this path");
    app.add_option("--rank", rank, "This instance's rank in the pipe group");
    app.add_option("--group-size", group_size,
                   "Number of cooperating pipe instances");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError &e)
    {
        // CLI11 prints help itself; usage problems exit 2, --help exits 0.
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    chunkstream::PipeSpec spec;
    try
    {
        spec.source_series = in_series;
        spec.source_config = ResolveConfig(in_config);

        chunkstream::PipeSink first;
        first.series = out_series;
        first.config = ResolveConfig(out_config);
        spec.sinks.push_back(std::move(first));

        if (!out2_series.empty())
        {
            chunkstream::PipeSink second;
            second.series = out2_series;
            second.config = ResolveConfig(out2_config);
            spec.sinks.push_back(std::move(second));
        }

        spec.strategy =
            strategy_json.empty()
                ? spec.source_config.strategy
                : chunkstream::StrategySpec::FromJsonText(strategy_json);
        spec.group.rank = rank;
        spec.group.group_size = group_size;
        spec.group.group_name = "pipe";
        spec.Validate();
    }
    catch (const chunkstream::ConfigError &e)
    {
        std::cerr << "chunkstream-pipe: " << e.what() << "\n";
        return 2;
    }

    try
    {
        const chunkstream::PipeReport report = chunkstream::RunPipe(spec);
        if (!report_path.empty())
        {
            std::ofstream out(report_path, std::ios::trunc);
            if (!out)
            {
                std::cerr << "chunkstream-pipe: cannot write report to '"
                          << report_path << "'\n";
                return 1;
            }
            out << chunkstream::ToCsv(report);
        }
        std::cerr << "chunkstream-pipe: forwarded " << report.steps.size()
                  << " steps, " << report.TotalBytes() << " bytes\n";
        return 0;
    }
    catch (const std::exception &e)
    {
        std::cerr << "chunkstream-pipe: " << e.what() << "\n";
        return 1;
    }
}
