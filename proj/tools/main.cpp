#include "cli.hpp"

int main(int argc, char** argv) { return sgrushin::app::cli_main(argc, argv); }
