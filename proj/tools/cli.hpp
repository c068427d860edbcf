#pragma once

// Command-line front end: sgrushin <subcommand> [--config F] [--out D] [--workers N] [--format csv|json|svg]...

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "experiments.hpp"

namespace sgrushin::app {

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App cli{"Degenerate stochastic parabolic experiments"};
    std::string sub;
    Options o;
    std::string subs;
    for (const auto& s : subcommands()) subs += (subs.empty() ? "" : ", ") + s;
    cli.add_option("subcommand", sub, "one of: " + subs)->required();
    cli.add_option("--config", o.config_path, "sectioned key = value file (docs/config.md)");
    cli.add_option("--out", o.out_dir, "output directory (overrides output.dir)");
    cli.add_option("--workers", o.workers, "worker threads; results do not depend on it")->check(CLI::Range(1u, 1024u));
    cli.add_option("--format", o.formats, "csv, json or svg; repeatable (overrides output.formats)")
        ->check(CLI::IsMember({"csv", "json", "svg"}));
    try {
        cli.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << cli.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n' << cli.help();
        return 1;
    }
    return run(sub, o, out, err);
}

}  // namespace sgrushin::app
