use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    CapacityTooSmall { requested: u64, minimum: u64 },
    LayoutNameTooLong(usize),
    LayoutMismatch { expected: String, found: String },
    BadMagic,
    UnsupportedFormat(u32),
    Corrupt(&'static str),
    OutOfSpace { requested: u64 },
    OutOfBounds { offset: u64 },
    ForeignPool { expected: u64, found: u64 },
    DoubleFree { offset: u64 },
    NestedTransaction,
    TxStateError(&'static str),
    TxRequired,
    LogOverflow { needed: u64, capacity: u64 },
    /// The armed crash plan fired; the handle is no longer usable.
    SimulatedCrash { ordinal: u64 },
    /// A previous simulated crash invalidated this handle.
    Poisoned,
    OverlappingFields { first: String, second: String },
    NonContiguousLevel { expected: u32, got: u32 },
    EmptyExtension,
    NoSuchField(String),
    UnknownLevel(u32),
    FingerprintMismatch { expected: u64, found: u64 },
    MigrationMissing { from: u32, to: u32 },
    WrongKernel { expected: u32, found: u32 },
    InvalidArgument(&'static str),
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::CapacityTooSmall { requested, minimum } => {
                write!(f, "pool capacity {requested} is below the minimum of {minimum} bytes")
            }
            Error::LayoutNameTooLong(len) => {
                write!(f, "layout name is {len} bytes, at most 63 are allowed")
            }
            Error::LayoutMismatch { expected, found } => {
                write!(f, "layout mismatch: pool has {found:?}, caller expected {expected:?}")
            }
            Error::BadMagic => f.write_str("not a pool file (bad magic)"),
            Error::UnsupportedFormat(v) => write!(f, "unsupported pool format version {v}"),
            Error::Corrupt(what) => write!(f, "corrupt pool: {what}"),
            Error::OutOfSpace { requested } => {
                write!(f, "out of space allocating {requested} bytes")
            }
            Error::OutOfBounds { offset } => write!(f, "offset {offset:#x} is out of bounds"),
            Error::ForeignPool { expected, found } => {
                write!(f, "object id belongs to pool {found:#x}, not {expected:#x}")
            }
            Error::DoubleFree { offset } => write!(f, "double free of object at {offset:#x}"),
            Error::NestedTransaction => f.write_str("a transaction is already active"),
            Error::TxStateError(what) => write!(f, "transaction state error: {what}"),
            Error::TxRequired => f.write_str("operation requires an active transaction"),
            Error::LogOverflow { needed, capacity } => {
                write!(f, "undo log overflow: need {needed} bytes, capacity {capacity}")
            }
            Error::SimulatedCrash { ordinal } => {
                write!(f, "simulated crash at persistent write #{ordinal}")
            }
            Error::Poisoned => f.write_str("pool handle invalidated by a simulated crash"),
            Error::OverlappingFields { first, second } => {
                write!(f, "fields {first} and {second} overlap")
            }
            Error::NonContiguousLevel { expected, got } => {
                write!(f, "extension level {got} is not contiguous (next level is {expected})")
            }
            Error::EmptyExtension => f.write_str("extension must declare a non-empty payload"),
            Error::NoSuchField(name) => write!(f, "no such field: {name}"),
            Error::UnknownLevel(level) => write!(f, "unknown extension level {level}"),
            Error::FingerprintMismatch { expected, found } => {
                write!(f, "base layout fingerprint {found:#x} does not match {expected:#x}")
            }
            Error::MigrationMissing { from, to } => {
                write!(f, "no migration pass registered from version {from} to {to}")
            }
            Error::WrongKernel { expected, found } => {
                write!(f, "root describes map kind/layout {found}, expected {expected}")
            }
            Error::InvalidArgument(what) => write!(f, "invalid argument: {what}"),
            Error::Io(msg) => write!(f, "io: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
