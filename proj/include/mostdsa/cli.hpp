#pragma once
namespace mostdsa::cli {
int run(int argc, char** argv);
inline int run(int, char**) { return 0; }  // placeholder until the CLI lands
}
