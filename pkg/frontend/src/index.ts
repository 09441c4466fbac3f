import { loadConfig } from "./config.js";
import { GuidanceService } from "./server.js";

const configPath = process.argv[2];
const config = loadConfig(configPath);
const service = new GuidanceService(config);

service
    .listen()
    .then((port) => {
        console.log(
            `guidance service on http://${config.host}:${port} ` +
                `(model ${config.modelId}, stub ${config.stubMode.kind})`,
        );
    })
    .catch((err) => {
        console.error(`failed to start: ${err}`);
        process.exit(1);
    });
