/** Subprocess plumbing: temp workspaces, CLI invocation, key=value parsing. */

import { execFile } from "node:child_process";
import { mkdtemp, rm, writeFile, readFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import path from "node:path";
import { promisify } from "node:util";

import { NativeError } from "./errors.js";

const execFileAsync = promisify(execFile);

const PYTHON = process.env.COVISFLOW_PYTHON ?? "python3";
const CLI_MODULE = "covisflow.cli";

export interface CliResult {
  stdout: string;
  values: Map<string, string>;
}

export async function runCli(args: string[], cwd?: string): Promise<CliResult> {
  try {
    const { stdout } = await execFileAsync(PYTHON, ["-m", CLI_MODULE, ...args], {
      cwd,
      maxBuffer: 64 * 1024 * 1024,
    });
    return { stdout, values: parseKeyValues(stdout) };
  } catch (error) {
    const e = error as { code?: number; stderr?: string; message?: string };
    throw new NativeError(e.code ?? -1, e.stderr ?? e.message ?? "");
  }
}

export function parseKeyValues(text: string): Map<string, string> {
  const out = new Map<string, string>();
  for (const line of text.split("\n")) {
    const idx = line.indexOf("=");
    if (idx > 0) out.set(line.slice(0, idx), line.slice(idx + 1));
  }
  return out;
}

export async function withWorkspace<T>(fn: (dir: string) => Promise<T>): Promise<T> {
  const dir = await mkdtemp(path.join(tmpdir(), "covisflow-"));
  try {
    return await fn(dir);
  } finally {
    await rm(dir, { recursive: true, force: true });
  }
}

export async function writeBytes(dir: string, name: string, data: Buffer): Promise<string> {
  const full = path.join(dir, name);
  await writeFile(full, data);
  return full;
}

export async function writeText(dir: string, name: string, text: string): Promise<string> {
  const full = path.join(dir, name);
  await writeFile(full, text, "utf8");
  return full;
}

export async function readBytes(dir: string, name: string): Promise<Buffer> {
  return readFile(path.join(dir, name));
}

/** Flat key = value config body; values rendered via String() (shortest round-trip). */
export function configText(entries: Record<string, string | number>): string {
  return (
    Object.entries(entries)
      .map(([key, value]) => `${key} = ${value}`)
      .join("\n") + "\n"
  );
}
