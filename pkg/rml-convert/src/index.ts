export { unpickle, PickleError, NdArray, PyDict, Global, DType } from "./pickle";
export { parseArchive, ArchiveError } from "./archive";
export type { RmlArchive, ArchiveCell } from "./archive";
export { encodeAmcd, decodeAmcd, AmcdError, AMCD_MAGIC, AMCD_VERSION } from "./amcd";
export type { AmcdFile, AmcdRecord } from "./amcd";
export { convert } from "./convert";
export type { ConvertOptions, ConvertResult } from "./convert";
