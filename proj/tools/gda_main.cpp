#include "gda/cli.hpp"

int main(int argc, char** argv) { return gda::dispatch(argc, argv); }
