#!/usr/bin/env node
/**
 * rml-convert INPUT OUTPUT [--classes a,b,...] [--manifest PATH]
 *
 * Exit codes: 0 success, 1 usage error, 2 unreadable or malformed archive.
 */

import { ArchiveError } from "./archive";
import { AmcdError } from "./amcd";
import { convert, ConvertOptions } from "./convert";
import { PickleError } from "./pickle";

const USAGE =
  "usage: rml-convert INPUT OUTPUT [--classes a,b,...] [--manifest PATH]";

class UsageError extends Error {}

interface CliArgs {
  input: string;
  output: string;
  options: ConvertOptions;
}

export function parseArgs(argv: string[]): CliArgs | "help" {
  const positional: string[] = [];
  const options: ConvertOptions = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === "--help" || arg === "-h") {
      return "help";
    } else if (arg === "--classes") {
      const value = argv[++i];
      if (value === undefined) throw new UsageError("--classes needs a value");
      const names = value.split(",").map((s) => s.trim()).filter((s) => s.length > 0);
      if (names.length === 0) throw new UsageError("--classes list is empty");
      options.includeClasses = names;
    } else if (arg === "--manifest") {
      const value = argv[++i];
      if (value === undefined) throw new UsageError("--manifest needs a value");
      options.manifestPath = value;
    } else if (arg.startsWith("-")) {
      throw new UsageError(`unknown flag ${arg}`);
    } else {
      positional.push(arg);
    }
  }
  if (positional.length !== 2) {
    throw new UsageError(`expected INPUT and OUTPUT, got ${positional.length} arguments`);
  }
  return { input: positional[0], output: positional[1], options };
}

export function main(argv: string[]): number {
  let parsed: CliArgs | "help";
  try {
    parsed = parseArgs(argv);
  } catch (err) {
    process.stderr.write(`error: ${(err as Error).message}\n${USAGE}\n`);
    return 1;
  }
  if (parsed === "help") {
    process.stdout.write(USAGE + "\n");
    return 0;
  }
  try {
    const result = convert(parsed.input, parsed.output, parsed.options);
    process.stdout.write(
      `wrote ${result.totalRecords} records, ${result.classes.length} classes, ` +
        `L=${result.sequenceLength}, SNR ${result.snrGrid[0]}..${
          result.snrGrid[result.snrGrid.length - 1]
        } dB -> ${parsed.output}\n`,
    );
    return 0;
  } catch (err) {
    if (
      err instanceof PickleError ||
      err instanceof ArchiveError ||
      err instanceof AmcdError ||
      (err as NodeJS.ErrnoException).code === "ENOENT"
    ) {
      process.stderr.write(`error: ${(err as Error).message}\n`);
      return 2;
    }
    throw err;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
