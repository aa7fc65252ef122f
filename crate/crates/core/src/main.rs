use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::ChaCha20Rng;

use cryptopix::bench::{self, BenchInputs, BenchOp};
use cryptopix::client::{compute_histogram, finish_equalization, finish_gradient, finish_morphology, MorphMode};
use cryptopix::encoding::{EncryptedNumber, Precision, DEFAULT_BASE, DEFAULT_PRECISION};
use cryptopix::encrypted_image::{decrypt_image, decrypt_real, encrypt_image, EncryptedHistogram, EncryptedImage};
use cryptopix::image::{PlainImage, RealImage};
use cryptopix::kernel::{EdgeOperator, Kernel, StructuringElement};
use cryptopix::paillier::{os_rng, seeded_rng, Keypair, PrivateKey, PublicKey};
use cryptopix::reference::{self, compare, compare_real, ErrorReport};
use cryptopix::transport::{self, execute, Operation, Output, Payload, Server, TcpTransport, ADDR_ENV};
use cryptopix::Error;

const EXIT_OTHER: u8 = 1;
const EXIT_MISSING_KEY: u8 = 3;
const EXIT_BAD_IMAGE: u8 = 4;
const EXIT_UNREACHABLE: u8 = 5;

#[derive(Parser)]
#[command(name = "cryptopix", version, about = "Image processing on Paillier-encrypted images")]
struct Cli {
    /// Key size in bits; a comma-separated list for `bench`.
    #[arg(long, global = true, value_delimiter = ',', default_value = "1024")]
    bits: Vec<usize>,

    /// Encoding precision, a positive value no larger than 1.
    #[arg(long, global = true, default_value_t = DEFAULT_PRECISION)]
    precision: f64,

    #[arg(long, global = true, default_value_t = DEFAULT_BASE)]
    base: u32,

    /// Seed for all randomness, for reproducible runs.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key pair.
    Keygen {
        #[arg(long)]
        public: PathBuf,
        #[arg(long)]
        private: PathBuf,
    },
    /// Encrypt a PGM/PBM image, or its histogram.
    Encrypt {
        #[arg(long)]
        public: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Encrypt the image histogram instead of the pixels.
        #[arg(long)]
        histogram: bool,
    },
    /// Decrypt an encrypted image or histogram and apply client finishing.
    Decrypt(DecryptArgs),
    /// Run an operation on an encrypted payload, locally or on a server.
    Apply(ApplyArgs),
    /// Run an operation on a plaintext image.
    Reference(ReferenceArgs),
    /// Error statistics between two images or raw rasters, as CSV.
    Compare {
        #[arg(long)]
        ed: PathBuf,
        #[arg(long)]
        pd: PathBuf,
        /// Label for the CSV row.
        #[arg(long, default_value = "op")]
        label: String,
    },
    /// Serve operations over TCP until killed.
    Serve {
        #[arg(long, env = ADDR_ENV, default_value = "127.0.0.1:7878")]
        listen: String,
        #[arg(long, default_value_t = transport::DEFAULT_MAX_PAYLOAD)]
        max_payload: u64,
    },
    /// Timing CSV for encryption and operations.
    Bench {
        /// Operations to time (default: all).
        #[arg(long = "op", value_delimiter = ',')]
        ops: Vec<String>,
        /// Also time image encryption and decryption at each key size.
        #[arg(long)]
        crypto: bool,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Grayscale input (default: built-in 64x64 scene).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Binary input for morphology (default: built-in 64x64 pattern).
        #[arg(long)]
        binary: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DecryptArgs {
    #[arg(long)]
    private: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Fail on out-of-range pixels instead of clamping.
    #[arg(long)]
    strict: bool,
    /// Write unrounded values as a text raster.
    #[arg(long)]
    raw: bool,
    /// Threshold decrypted neighbourhood counts.
    #[arg(long, value_enum)]
    threshold: Option<MorphArg>,
    #[arg(long, default_value = "square3")]
    se: String,
    /// Vertical gradient component; writes the gradient magnitude.
    #[arg(long)]
    gradient_y: Option<PathBuf>,
    /// Apply a decrypted equalization transform to this image.
    #[arg(long)]
    apply_to: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MorphArg {
    Erosion,
    Dilation,
}

impl From<MorphArg> for MorphMode {
    fn from(m: MorphArg) -> MorphMode {
        match m {
            MorphArg::Erosion => MorphMode::Erosion,
            MorphArg::Dilation => MorphMode::Dilation,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OpArg {
    Negate,
    Brightness,
    Convolve,
    Lpf,
    Gradient,
    Sharpen,
    Morph,
    Equalize,
}

#[derive(Args)]
struct OpParams {
    #[arg(long, value_enum)]
    op: OpArg,
    /// Kernel as `RxC:w,...[/scale]`, `avgN` or `identityN`.
    #[arg(long)]
    kernel: Option<String>,
    /// Gradient operator: sobel, prewitt, robinson or kirsch.
    #[arg(long, default_value = "sobel")]
    operator: String,
    /// Sharpening amount.
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    /// Structuring element as `RxC:bits`, `squareN` or `crossN`.
    #[arg(long, default_value = "square3")]
    se: String,
    /// Brightness offset.
    #[arg(long, allow_hyphen_values = true)]
    value: Option<f64>,
}

#[derive(Args)]
struct ApplyArgs {
    #[command(flatten)]
    op: OpParams,
    #[arg(long)]
    public: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Second output (vertical component) for `gradient`.
    #[arg(long)]
    output_y: Option<PathBuf>,
    /// Server address; defaults to CRYPTOPIX_ADDR when that is set.
    #[arg(long, conflicts_with = "local")]
    server: Option<String>,
    /// Run in-process even if CRYPTOPIX_ADDR is set.
    #[arg(long)]
    local: bool,
}

#[derive(Args)]
struct ReferenceArgs {
    #[command(flatten)]
    op: OpParams,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Second output (vertical component) for `gradient`.
    #[arg(long)]
    output_y: Option<PathBuf>,
    #[arg(long)]
    raw: bool,
    #[arg(long, value_enum)]
    threshold: Option<MorphArg>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        Failure { code: EXIT_OTHER, message: e.to_string() }
    }
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| fail(EXIT_OTHER, e.to_string()))?;
    }
    let ctx = Context {
        precision: Precision::new(cli.precision, cli.base)?,
        seed: cli.seed,
    };
    match cli.command {
        Command::Keygen { public, private } => {
            let [bits] = cli.bits[..] else {
                return Err(fail(EXIT_OTHER, "keygen takes a single --bits value"));
            };
            let kp = Keypair::generate(bits, &mut ctx.rng())?;
            write(&public, &kp.public.to_bytes())?;
            write(&private, &kp.private.to_bytes())?;
            eprintln!("{bits}-bit key {}", kp.public.fingerprint());
            Ok(())
        }
        Command::Encrypt { public, input, output, histogram } => {
            let pk = load_public(&public)?;
            let img = load_image(&input)?;
            let mut rng = ctx.rng();
            let bytes = if histogram {
                let counts = compute_histogram(&img, img.levels() as usize)?;
                EncryptedHistogram::encrypt(&pk, &counts, img.width(), img.height(), &ctx.precision, &mut rng)?
                    .to_bytes(&pk)?
            } else {
                encrypt_image(&pk, &img, &ctx.precision, &mut rng)?.to_bytes(&pk)?
            };
            write(&output, &bytes)
        }
        Command::Decrypt(args) => cmd_decrypt(args),
        Command::Apply(args) => cmd_apply(&ctx, args),
        Command::Reference(args) => cmd_reference(args),
        Command::Compare { ed, pd, label } => {
            let report = match (load_raster(&ed)?, load_raster(&pd)?) {
                (Raster::Image(a), Raster::Image(b)) => compare(&a, &b)?,
                (a, b) => compare_real(&a.into_real(), &b.into_real())?,
            };
            println!("{}", ErrorReport::CSV_HEADER);
            println!("{}", report.csv_row(&label, cli.precision));
            Ok(())
        }
        Command::Serve { listen, max_payload } => {
            let server = Arc::new(Server::new(max_payload, ctx.seed));
            let listener = std::net::TcpListener::bind(&listen)
                .map_err(|e| fail(EXIT_OTHER, format!("cannot listen on {listen}: {e}")))?;
            let addr = listener.local_addr().map_err(Error::from)?;
            println!("{addr}");
            server
                .serve(listener, Arc::new(AtomicBool::new(false)))
                .map_err(|e| fail(EXIT_OTHER, e.to_string()))
        }
        Command::Bench { ops, crypto, reps, input, binary, output } => {
            let gray = match input {
                Some(p) => load_image(&p)?,
                None => bench::synthetic_gray(64, 64),
            };
            let bin = match binary {
                Some(p) => load_image(&p)?,
                None => bench::synthetic_binary(64, 64),
            };
            let ops: Vec<BenchOp> = if ops.is_empty() {
                BenchOp::ALL.to_vec()
            } else {
                ops.iter().map(|s| s.parse()).collect::<Result<_, _>>()?
            };
            let threads = cli.threads.unwrap_or(1);
            let seed = ctx.seed.unwrap_or(0);
            let mut rows = Vec::new();
            if crypto {
                rows.extend(bench::bench_crypto(&cli.bits, &gray, &ctx.precision, reps, threads, seed)?);
            }
            for &bits in &cli.bits {
                let kp = Keypair::generate(bits, &mut seeded_rng(seed ^ bits as u64))?;
                let inputs = BenchInputs { keypair: &kp, gray: &gray, binary: &bin, precision: ctx.precision };
                rows.extend(bench::bench_ops(&inputs, &ops, reps, threads, seed)?);
            }
            let csv = bench::to_csv(&rows);
            match output {
                Some(p) => write(&p, csv.as_bytes()),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
    }
}

struct Context {
    precision: Precision,
    seed: Option<u64>,
}

impl Context {
    fn rng(&self) -> ChaCha20Rng {
        match self.seed {
            Some(s) => seeded_rng(s),
            None => os_rng(),
        }
    }
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| fail(EXIT_OTHER, format!("cannot write {}: {e}", path.display())))
}

fn read_key_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| fail(EXIT_MISSING_KEY, format!("cannot read key {}: {e}", path.display())))
}

fn load_public(path: &Path) -> CliResult<PublicKey> {
    let bytes = read_key_file(path)?;
    // a private key file also carries the public key
    PublicKey::from_bytes(&bytes)
        .or_else(|_| PrivateKey::from_bytes(&bytes).map(|sk| sk.public_key().clone()))
        .map_err(|e| fail(EXIT_MISSING_KEY, format!("bad key {}: {e}", path.display())))
}

fn load_private(path: &Path) -> CliResult<PrivateKey> {
    PrivateKey::from_bytes(&read_key_file(path)?)
        .map_err(|e| fail(EXIT_MISSING_KEY, format!("bad private key {}: {e}", path.display())))
}

fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| fail(EXIT_BAD_IMAGE, format!("cannot read {}: {e}", path.display())))
}

fn load_image(path: &Path) -> CliResult<PlainImage> {
    PlainImage::from_netpbm(&read_input(path)?)
        .map_err(|e| fail(EXIT_BAD_IMAGE, format!("{}: {e}", path.display())))
}

enum Encrypted {
    Image(EncryptedImage),
    Histogram(EncryptedHistogram),
}

fn load_encrypted(path: &Path) -> CliResult<Encrypted> {
    let bytes = read_input(path)?;
    let parsed = if bytes.starts_with(b"CPXH") {
        EncryptedHistogram::from_bytes(&bytes).map(Encrypted::Histogram)
    } else {
        EncryptedImage::from_bytes(&bytes).map(Encrypted::Image)
    };
    parsed.map_err(|e| fail(EXIT_BAD_IMAGE, format!("{}: {e}", path.display())))
}

enum Raster {
    Image(PlainImage),
    Real(RealImage),
}

impl Raster {
    fn into_real(self) -> RealImage {
        match self {
            Raster::Image(i) => i.to_real(),
            Raster::Real(r) => r,
        }
    }
}

fn load_raster(path: &Path) -> CliResult<Raster> {
    let bytes = read_input(path)?;
    if bytes.first() == Some(&b'P') {
        return Ok(Raster::Image(load_image(path)?));
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| fail(EXIT_BAD_IMAGE, format!("{}: not an image or raster", path.display())))?;
    RealImage::from_text(&text)
        .map(Raster::Real)
        .map_err(|e| fail(EXIT_BAD_IMAGE, format!("{}: {e}", path.display())))
}

fn write_real(path: &Path, r: &RealImage) -> CliResult<()> {
    write(path, r.to_text().as_bytes())
}

fn write_image(path: &Path, img: &PlainImage) -> CliResult<()> {
    write(path, &img.to_netpbm())
}

fn cmd_decrypt(args: DecryptArgs) -> CliResult<()> {
    let sk = load_private(&args.private)?;
    let eimg = match load_encrypted(&args.input)? {
        Encrypted::Histogram(h) => {
            let t = h.decrypt(&sk)?;
            return match &args.apply_to {
                Some(p) => write_image(&args.output, &finish_equalization(&load_image(p)?, &t)?),
                None => {
                    let lines: String = t.iter().map(|v| format!("{v:?}\n")).collect();
                    write(&args.output, lines.as_bytes())
                }
            };
        }
        Encrypted::Image(e) => e,
    };
    if let Some(gy) = &args.gradient_y {
        let Encrypted::Image(gy) = load_encrypted(gy)? else {
            return Err(fail(EXIT_BAD_IMAGE, "gradient component is not an image"));
        };
        let field = finish_gradient(&decrypt_real(&sk, &eimg)?, &decrypt_real(&sk, &gy)?)?;
        return if args.raw {
            write_real(&args.output, &field.magnitude)
        } else {
            write_image(&args.output, &field.display_magnitude())
        };
    }
    if args.raw {
        return write_real(&args.output, &decrypt_real(&sk, &eimg)?);
    }
    let img = decrypt_image(&sk, &eimg, !args.strict)?;
    match args.threshold {
        Some(mode) => {
            let se: StructuringElement = args.se.parse()?;
            write_image(&args.output, &finish_morphology(&img, &se, mode.into())?)
        }
        None => write_image(&args.output, &img),
    }
}

fn kernel_or(spec: &Option<String>, default: &str) -> CliResult<Kernel> {
    Ok(spec.as_deref().unwrap_or(default).parse()?)
}

fn gradient_kernels(p: &OpParams) -> CliResult<(Kernel, Kernel)> {
    Ok(p.operator.parse::<EdgeOperator>()?.kernels())
}

fn cmd_apply(ctx: &Context, args: ApplyArgs) -> CliResult<()> {
    let pk = load_public(&args.public)?;
    let payload = match load_encrypted(&args.input)? {
        Encrypted::Image(e) => Payload::Image(e),
        Encrypted::Histogram(h) => Payload::Histogram(h),
    };
    let mut rng = ctx.rng();
    let p = &args.op;
    let op = match p.op {
        OpArg::Negate => Operation::Negate,
        OpArg::Brightness => {
            let v = p.value.ok_or_else(|| fail(EXIT_OTHER, "brightness needs --value"))?;
            let precision = match &payload {
                Payload::Image(e) => e.precision(),
                Payload::Histogram(h) => h.precision(),
            };
            Operation::Brightness(EncryptedNumber::encrypt_real(&pk, v, &precision, &mut rng)?)
        }
        OpArg::Convolve => Operation::Convolve(kernel_or(&p.kernel, "avg3")?),
        OpArg::Lpf => Operation::Convolve(Kernel::average(3, 3)?),
        OpArg::Gradient => {
            let (h1, h2) = gradient_kernels(p)?;
            Operation::Gradient(h1, h2)
        }
        OpArg::Sharpen => Operation::Sharpen { k: p.k, lpf: kernel_or(&p.kernel, "avg3")? },
        OpArg::Morph => Operation::MorphSum(p.se.parse()?),
        OpArg::Equalize => Operation::EqualizeTransform,
    };
    let server = args.server.clone().or_else(|| {
        if args.local {
            None
        } else {
            std::env::var(ADDR_ENV).ok()
        }
    });
    let output = match server {
        Some(addr) => {
            let t = TcpTransport::new(addr.clone());
            transport::remote_execute(&t, &pk, &op, &payload).map_err(|e| match e {
                Error::Io(io) => fail(EXIT_UNREACHABLE, format!("server {addr}: {io}")),
                other => Failure::from(other),
            })?
        }
        None => execute(&pk, &op, &payload, &mut rng)?,
    };
    match output {
        Output::Images(images) => {
            write(&args.output, &images[0].to_bytes(&pk)?)?;
            if let Some(gy) = images.get(1) {
                let path = args
                    .output_y
                    .as_ref()
                    .ok_or_else(|| fail(EXIT_OTHER, "gradient needs --output-y"))?;
                write(path, &gy.to_bytes(&pk)?)?;
            }
            Ok(())
        }
        Output::Histogram(h) => write(&args.output, &h.to_bytes(&pk)?),
    }
}

fn cmd_reference(args: ReferenceArgs) -> CliResult<()> {
    let img = load_image(&args.input)?;
    let p = &args.op;
    let emit = |r: &RealImage| -> CliResult<()> {
        if args.raw {
            write_real(&args.output, r)
        } else {
            write_image(&args.output, &r.quantize(img.levels()))
        }
    };
    match p.op {
        OpArg::Negate => write_image(&args.output, &reference::ref_negate(&img)),
        OpArg::Brightness => {
            let v = p.value.ok_or_else(|| fail(EXIT_OTHER, "brightness needs --value"))?;
            emit(&reference::ref_brightness(&img, v))
        }
        OpArg::Convolve => emit(&reference::ref_convolve(&img, &kernel_or(&p.kernel, "avg3")?)?),
        OpArg::Lpf => emit(&reference::ref_convolve(&img, &Kernel::average(3, 3)?)?),
        OpArg::Sharpen => emit(&reference::ref_sharpen(&img, p.k, &kernel_or(&p.kernel, "avg3")?)?),
        OpArg::Gradient => {
            let (h1, h2) = gradient_kernels(p)?;
            let (gx, gy) = reference::ref_gradient(&img, &h1, &h2)?;
            match &args.output_y {
                Some(y) => {
                    write_real(&args.output, &gx)?;
                    write_real(y, &gy)
                }
                None => {
                    let field = finish_gradient(&gx, &gy)?;
                    if args.raw {
                        write_real(&args.output, &field.magnitude)
                    } else {
                        write_image(&args.output, &field.display_magnitude())
                    }
                }
            }
        }
        OpArg::Morph => {
            let se: StructuringElement = p.se.parse()?;
            match args.threshold {
                Some(mode) => write_image(&args.output, &reference::ref_morph(&img, &se, mode.into())?),
                None => write_image(&args.output, &reference::ref_morph_sum(&img, &se)?),
            }
        }
        OpArg::Equalize => write_image(&args.output, &reference::ref_equalize(&img)),
    }
}
