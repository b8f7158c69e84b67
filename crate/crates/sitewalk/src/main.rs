use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sitewalk::client::{parse_drps, MissionPlanner};
use sitewalk::gateway::{self, Gateway, GatewayConfig};
use sitewalk::{ClientError, Middleware, MiddlewareConfig, Relay, RelayClient, RelayConfig};
use sitewalk_core::{load_building_model, Drp, Mission, Pose2D};
use tracing::Level;

#[derive(Parser)]
#[command(name = "sitewalk", version, about = "Plan, dispatch and review robotic reality-capture missions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compose a mission document and print it.
    Plan(PlanArgs),
    /// Plan (or load) a mission, send it to the robot and wait for the captures.
    Dispatch(DispatchArgs),
    /// List stored inspections for a date.
    Fetch(FetchArgs),
    /// Run the HTTP gateway for the operator console.
    Serve(ServeArgs),
    /// Run the relay server.
    Relay(RelayArgs),
    /// Run the site middleware with a simulated robot.
    Middleware(MiddlewareArgs),
}

#[derive(Args, Clone)]
struct RelayConn {
    /// Relay address, host:port.
    #[arg(long, default_value = "127.0.0.1:7400")]
    relay: String,
    /// Relay token; falls back to $SITEWALK_TOKEN.
    #[arg(long)]
    token: Option<String>,
    #[arg(long, default_value = "default")]
    project: String,
}

impl RelayConn {
    async fn connect(&self) -> Result<RelayClient, ClientError> {
        let token = match &self.token {
            Some(t) => t.clone(),
            None => std::env::var("SITEWALK_TOKEN").map_err(|_| ClientError::Input("--token is required".into()))?,
        };
        RelayClient::connect(&self.relay, &token, &self.project).await
    }
}

#[derive(Args, Clone)]
struct Planning {
    /// Building model document.
    #[arg(long)]
    model: PathBuf,
    /// JSON list of {"id","x","y"} reality points.
    #[arg(long)]
    drp: Option<PathBuf>,
    /// Robot start as x,y[,theta]; asked from the robot when omitted.
    #[arg(long, value_parser = parse_pose)]
    start: Option<Pose2D>,
    /// Inspection date, YYYY-MM-DD (default: today, UTC).
    #[arg(long)]
    date: Option<String>,
    #[arg(long, default_value_t = sitewalk_core::sim::DEFAULT_SPEED)]
    speed: f64,
    #[arg(long, default_value_t = sitewalk_core::sim::DEFAULT_DWELL)]
    dwell: f64,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    planning: Planning,
    /// Plan without contacting the relay.
    #[arg(long)]
    dry_run: bool,
    /// Write the mission here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    conn: RelayConn,
}

#[derive(Args)]
struct DispatchArgs {
    #[command(flatten)]
    planning: Planning,
    /// Send this mission document instead of planning one.
    #[arg(long)]
    mission: Option<PathBuf>,
    /// Simulated seconds per wall second at the middleware; sets the timeout.
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
    #[command(flatten)]
    conn: RelayConn,
}

#[derive(Args)]
struct FetchArgs {
    #[arg(long)]
    date: String,
    /// Also write each capture's PNG into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    conn: RelayConn,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
    /// Token the console must present to the gateway.
    #[arg(long)]
    gateway_token: String,
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long)]
    date: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
    #[command(flatten)]
    conn: RelayConn,
}

#[derive(Args)]
struct RelayArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    storage: Option<PathBuf>,
}

#[derive(Args)]
struct MiddlewareArgs {
    #[arg(long)]
    config: PathBuf,
}

fn parse_pose(s: &str) -> Result<Pose2D, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [x, y] => Ok(Pose2D::new(x, y, 0.0)),
        [x, y, t] => Ok(Pose2D::new(x, y, t)),
        _ => Err("expected x,y or x,y,theta".into()),
    }
}

fn today() -> String {
    chrono::Utc::now().format("%Y-%m-%d").to_string()
}

fn read(path: &Path) -> Result<Vec<u8>, ClientError> {
    std::fs::read(path).map_err(|e| ClientError::Input(format!("{}: {e}", path.display())))
}

struct Prepared {
    planner: MissionPlanner,
    drps: Vec<Drp>,
}

fn prepare(p: &Planning) -> Result<Prepared, ClientError> {
    let model = load_building_model(&read(&p.model)?)?;
    let mut planner = MissionPlanner::new(model)?;
    planner.speed_mps = p.speed;
    planner.dwell_s = p.dwell;
    let drps = match &p.drp {
        Some(path) => parse_drps(&read(path)?)?,
        None => Vec::new(),
    };
    Ok(Prepared { planner, drps })
}

/// Start pose for planning without a robot: the first DRP, else the first
/// walkable grid cell.
fn offline_start(prep: &Prepared) -> Pose2D {
    if let Some(d) = prep.drps.first() {
        return Pose2D::new(d.position.x, d.position.y, 0.0);
    }
    let grid = &prep.planner.grid;
    let first = grid.occupancy().iter().position(|&w| w).map(|i| grid.center(grid.cell_at_index(i)));
    first.map_or(Pose2D::new(0.0, 0.0, 0.0), |p| Pose2D::new(p.x, p.y, 0.0))
}

async fn plan(args: PlanArgs) -> Result<(), ClientError> {
    let prep = prepare(&args.planning)?;
    let start = match (args.planning.start, args.dry_run) {
        (Some(p), _) => p,
        (None, true) => offline_start(&prep),
        (None, false) => args.conn.connect().await?.robot_state().await?.pose,
    };
    let date = args.planning.date.clone().unwrap_or_else(today);
    let mission = prep.planner.plan(&start, &prep.drps, &date)?;
    let wire = mission.to_wire();
    match args.out {
        Some(path) => std::fs::write(&path, wire).map_err(|e| ClientError::Input(format!("{}: {e}", path.display())))?,
        None => print!("{wire}"),
    }
    eprintln!(
        "mission {}: {} DRPs, {:.2} m, ~{:.0} s",
        mission.mission_id,
        mission.drp_count(),
        mission.path_length(),
        mission.estimated_duration()
    );
    Ok(())
}

async fn dispatch(args: DispatchArgs) -> Result<(), ClientError> {
    let client = args.conn.connect().await?;
    let mission = match &args.mission {
        Some(path) => Mission::from_wire(&read(path)?).map_err(|e| ClientError::Input(e.to_string()))?,
        None => {
            let prep = prepare(&args.planning)?;
            let start = match args.planning.start {
                Some(p) => p,
                None => client.robot_state().await?.pose,
            };
            let date = args.planning.date.clone().unwrap_or_else(today);
            prep.planner.plan(&start, &prep.drps, &date)?
        }
    };
    eprintln!("dispatching {} ({} DRPs, {:.2} m)", mission.mission_id, mission.drp_count(), mission.path_length());
    let mut last = usize::MAX;
    let record = client
        .dispatch_and_collect(&mission, args.time_scale, |p| {
            if p.captures_taken != last {
                last = p.captures_taken;
                eprintln!("  t={:7.1}s  captures {}/{}", p.t, p.captures_taken, p.drp_count);
            }
        })
        .await?;
    println!("mission {}  date {}  total {:.1} s", record.mission_id, record.inspection_date, record.total_time);
    print_captures(&record);
    Ok(())
}

fn print_captures(record: &sitewalk::protocol::InspectionRecord) {
    println!("  {:>3}  {:<12} {:<20} {:>9} {:>9} {:>9}", "#", "drp", "capture", "x", "y", "t");
    for c in &record.captures {
        println!(
            "  {:>3}  {:<12} {:<20} {:>9.3} {:>9.3} {:>9.1}",
            c.order, c.drp_id, c.capture_id, c.pose_at_capture.x, c.pose_at_capture.y, c.timestamp
        );
    }
}

async fn fetch(args: FetchArgs) -> Result<(), ClientError> {
    let client = args.conn.connect().await?;
    let records = client.fetch(&args.date).await?;
    if records.is_empty() {
        println!("no inspections on {}", args.date);
    }
    for r in &records {
        println!("mission {}  date {}  {} captures", r.mission_id, r.inspection_date, r.captures.len());
        print_captures(r);
        if let Some(dir) = &args.out {
            std::fs::create_dir_all(dir).map_err(|e| ClientError::Input(e.to_string()))?;
            for c in &r.captures {
                let path = dir.join(format!("{}.png", c.capture_id));
                std::fs::write(&path, &c.payload).map_err(|e| ClientError::Input(e.to_string()))?;
            }
        }
    }
    Ok(())
}

async fn serve(args: ServeArgs) -> anyhow::Result<()> {
    let doc = std::fs::read(&args.model).with_context(|| args.model.display().to_string())?;
    let planner = MissionPlanner::new(load_building_model(&doc)?)?;
    let client = args.conn.connect().await?;
    let schedule = match &args.schedule {
        Some(p) => Some(std::fs::read_to_string(p).with_context(|| p.display().to_string())?),
        None => None,
    };
    let config = GatewayConfig {
        token: args.gateway_token,
        time_scale: args.time_scale,
        date: args.date,
        schedule,
    };
    gateway::serve(Gateway::new(client, planner, doc, config), &args.listen).await?;
    Ok(())
}

async fn relay(args: RelayArgs) -> anyhow::Result<()> {
    let mut config = RelayConfig::load(&args.config).with_context(|| args.config.display().to_string())?;
    if let Some(l) = args.listen {
        config.listen = l;
    }
    if let Some(s) = args.storage {
        config.storage = s;
    }
    let listen = config.listen.clone();
    let (addr, task) = Relay::new(&config)?.spawn(&listen).await?;
    tracing::info!(%addr, "relay listening");
    tokio::select! {
        _ = task => {}
        _ = tokio::signal::ctrl_c() => {}
    }
    Ok(())
}

async fn middleware(args: MiddlewareArgs) -> anyhow::Result<()> {
    let config = MiddlewareConfig::load(&args.config).with_context(|| args.config.display().to_string())?;
    let mw = Middleware::from_config(&config)?;
    tokio::select! {
        r = mw.connect(&config.relay) => r?,
        _ = tokio::signal::ctrl_c() => {}
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.command {
        Command::Serve(_) | Command::Relay(_) | Command::Middleware(_) => Level::INFO,
        _ => Level::WARN,
    };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();

    let result: Result<(), (i32, String)> = match cli.command {
        Command::Plan(a) => plan(a).await.map_err(|e| (e.exit_code(), e.to_string())),
        Command::Dispatch(a) => dispatch(a).await.map_err(|e| (e.exit_code(), e.to_string())),
        Command::Fetch(a) => fetch(a).await.map_err(|e| (e.exit_code(), e.to_string())),
        Command::Serve(a) => serve(a).await.map_err(|e| (1, format!("{e:#}"))),
        Command::Relay(a) => relay(a).await.map_err(|e| (1, format!("{e:#}"))),
        Command::Middleware(a) => middleware(a).await.map_err(|e| (1, format!("{e:#}"))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code as u8)
        }
    }
}
