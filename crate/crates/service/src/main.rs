use lse_dose_service::{serve, ServiceConfig};

#[tokio::main]
async fn main() {
    let config = match ServiceConfig::from_env() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    };
    if let Err(e) = serve(config, |addr| println!("listening on {addr}")).await {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}
